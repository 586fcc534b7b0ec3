"""Labeled stall-crop datasets: directory scans, deterministic splits, batches, fixtures.

Expected layout is ``<root>/<lot>/.../{Empty|Occupied}/*.{jpg,png}``: the label
comes from the immediate parent folder, the lot from the first path segment,
and weather/date tags are picked up from intermediate segments when present.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyIndexError, ImageLoadError, ValidationError

log = logging.getLogger(__name__)

VACANT = "vacant"
OCCUPIED = "occupied"

LABEL_FOLDERS = {"Empty": VACANT, "Occupied": OCCUPIED}
WEATHER_TAGS = ("sunny", "rainy", "cloudy")
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")

SYNTH_LOT = "SYNTH"


@dataclass
class SampleRecord:
    path: str
    lot: str
    label: str  # vacant | occupied
    weather: str = "unknown"
    captured_at: str | None = None  # ISO date when a path segment carries one


@dataclass
class DatasetIndex:
    records: list[SampleRecord] = field(default_factory=list)

    @property
    def counts(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        for r in self.records:
            key = (r.lot, r.label)
            out[key] = out.get(key, 0) + 1
        return out

    def lots(self) -> list[str]:
        return sorted({r.lot for r in self.records})

    def labels(self) -> set[str]:
        return {r.label for r in self.records}

    def filter_lots(self, lots) -> "DatasetIndex":
        wanted = set(lots)
        return DatasetIndex([r for r in self.records if r.lot in wanted])

    def export_jsonl(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in self.records:
                fh.write(
                    json.dumps(
                        {"path": r.path, "lot": r.lot, "label": r.label, "weather": r.weather}
                    )
                    + "\n"
                )

    def __len__(self) -> int:
        return len(self.records)


def scan_tree(root) -> DatasetIndex:
    """Index every labeled crop under root; labels come only from folder names."""
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"dataset root is not a directory: {root}")
    records = []
    seen = set()
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        label = LABEL_FOLDERS.get(path.parent.name)
        if label is None:
            continue
        rel = path.relative_to(root)
        if len(rel.parts) < 3:  # need at least <lot>/<label>/<file>
            continue
        if not os.access(path, os.R_OK):
            log.warning("skipping unreadable file: %s", path)
            continue
        key = str(path)
        if key in seen:
            continue
        seen.add(key)
        lot = rel.parts[0]
        weather = "unknown"
        captured_at = None
        for seg in rel.parts[1:-2]:
            if seg.lower() in WEATHER_TAGS:
                weather = seg.lower()
            elif _DATE_RE.match(seg):
                captured_at = seg
        records.append(SampleRecord(key, lot, label, weather, captured_at))
    if not records:
        raise EmptyIndexError(f"no labeled images under {root}")
    return DatasetIndex(records)


def split(index: DatasetIndex, ratio: float = 0.5, seed: int = 0) -> tuple[DatasetIndex, DatasetIndex]:
    """Deterministic, order-independent train/test partition.

    Records are ranked by a hash of (seed, path) and the first round(n*ratio)
    become the train half, so the realized fraction is exact to one sample.
    """
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio must be in (0, 1), got {ratio}")

    def rank(record: SampleRecord) -> str:
        return hashlib.sha256(f"{seed}|{record.path}".encode()).hexdigest()

    ordered = sorted(index.records, key=lambda r: (rank(r), r.path))
    k = int(round(len(ordered) * ratio))
    train = sorted(ordered[:k], key=lambda r: r.path)
    test = sorted(ordered[k:], key=lambda r: r.path)
    return DatasetIndex(train), DatasetIndex(test)


def load_image(path) -> np.ndarray:
    """Decode an image file to an RGB uint8 array [H,W,3]."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (OSError, ValueError, Image.DecompressionBombError) as exc:
        raise ImageLoadError(path, f"cannot decode image {path}: {exc}") from exc


def load_batch(index: DatasetIndex, ids, model) -> tuple[np.ndarray, np.ndarray]:
    """Decode and preprocess the given record ids into ([B,3,H,W], int labels)."""
    from .detector import preprocess  # function-level: detector imports this module

    if len(ids) == 0:
        raise ValidationError("load_batch needs at least one record id")
    inputs = []
    labels = []
    for i in ids:
        record = index.records[i]
        inputs.append(preprocess(model, load_image(record.path))[0])
        labels.append(0 if record.label == VACANT else 1)
    return np.stack(inputs), np.asarray(labels, dtype=np.int64)


def synth_crop(rng: np.random.Generator, label: str, size: int = 64) -> np.ndarray:
    """One synthetic stall crop: dark noisy ground, plus a bright textured
    rectangle when occupied. Occupied mean brightness always exceeds vacant."""
    ground = int(rng.integers(15, 50))
    img = ground + rng.integers(-10, 11, size=(size, size, 3))
    if label == OCCUPIED:
        rw = int(rng.integers(int(0.68 * size), int(0.84 * size) + 1))
        rh = int(rng.integers(int(0.68 * size), int(0.84 * size) + 1))
        x0 = int(rng.integers(0, size - rw + 1))
        y0 = int(rng.integers(0, size - rh + 1))
        body = int(rng.integers(170, 231))
        patch = body + rng.integers(-25, 26, size=(rh, rw, 3))
        img[y0 : y0 + rh, x0 : x0 + rw] = patch
    return np.clip(img, 0, 255).astype(np.uint8)


def synth_generate(out_dir, n_per_label: int, seed: int = 0, size: int = 64, lot: str = SYNTH_LOT) -> Path:
    """Write a deterministic synthetic lot in scan_tree layout (lot SYNTH by default)."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    for folder, label in (("Empty", VACANT), ("Occupied", OCCUPIED)):
        target = out_dir / lot / folder
        target.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_label):
            Image.fromarray(synth_crop(rng, label, size)).save(target / f"{label}_{i:04d}.png")
    return out_dir
