"""Poll camera snapshots, crop stall ROIs, classify them, persist observations.

One logical poller per camera; the detector callable is serialized through a
single lock so concurrent pollers cannot stack up inference memory. A camera
fetch failure never touches stall rows directly: statuses only degrade to
unknown via the staleness rule (no fresh observation for STALE_INTERVALS
polling intervals).
"""

from __future__ import annotations

import io
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable
from urllib.parse import urlparse

import numpy as np
import requests
from PIL import Image

from .errors import (
    ConfigError,
    CropError,
    FetchDecodeError,
    FetchError,
    FetchHTTPError,
    FetchTimeoutError,
    ValidationError,
)
from .registry import Bbox, Registry

log = logging.getLogger(__name__)

STALE_INTERVALS = 3  # missed polls before a stall is demoted to unknown

# A detector maps an RGB crop [H,W,3] uint8 to an occupied probability.
Detector = Callable[[np.ndarray], float]


@dataclass
class CameraConfig:
    camera_id: str
    lot_id: str
    snapshot_url: str
    poll_interval_s: float = 10.0
    timeout_s: float = 5.0
    username: str | None = None
    password: str | None = None

    def validate(self):
        if not self.camera_id or not self.lot_id:
            raise ValidationError("camera_id and lot_id must be non-empty")
        if self.poll_interval_s <= 0 or self.timeout_s <= 0:
            raise ValidationError("poll interval and timeout must be positive")
        parsed = urlparse(self.snapshot_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValidationError(f"snapshot_url must be an http(s) URL, got {self.snapshot_url!r}")


@dataclass
class Frame:
    camera_id: str
    captured_at: datetime
    image: np.ndarray  # RGB uint8 [H,W,3]


@dataclass
class CameraHealth:
    last_success: datetime | None = None
    last_error: str | None = None
    consecutive_failures: int = 0


@dataclass
class IngestStats:
    stalls_updated: int = 0
    failures: int = 0
    marked_unknown: int = 0


def decode_image_bytes(data: bytes) -> np.ndarray:
    """JPEG/PNG bytes to an RGB uint8 array."""
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def fetch_snapshot(cam: CameraConfig) -> Frame:
    """HTTP GET one still image; timeout, bad status, and bad body raise distinctly."""
    auth = (cam.username, cam.password) if cam.username else None
    try:
        resp = requests.get(cam.snapshot_url, timeout=cam.timeout_s, auth=auth)
    except requests.Timeout as exc:
        raise FetchTimeoutError(f"{cam.camera_id}: no answer within {cam.timeout_s}s") from exc
    except requests.RequestException as exc:
        raise FetchError(f"{cam.camera_id}: {exc}") from exc
    if not 200 <= resp.status_code < 300:
        raise FetchHTTPError(resp.status_code, f"{cam.camera_id}: HTTP {resp.status_code}")
    try:
        image = decode_image_bytes(resp.content)
    except Exception as exc:
        raise FetchDecodeError(f"{cam.camera_id}: body is not a decodable image: {exc}") from exc
    return Frame(cam.camera_id, datetime.now(timezone.utc), image)


def crop(frame: Frame, bbox: Bbox) -> np.ndarray:
    """Pixel-exact sub-rectangle; overhanging boxes are clamped with a warning."""
    h, w = frame.image.shape[:2]
    x0, y0 = min(bbox.x, w), min(bbox.y, h)
    x1, y1 = min(bbox.x + bbox.w, w), min(bbox.y + bbox.h, h)
    if x1 <= x0 or y1 <= y0:
        raise CropError(f"bbox {bbox} does not intersect {w}x{h} frame")
    if (x1 - x0, y1 - y0) != (bbox.w, bbox.h):
        log.warning(
            "camera %s: bbox %s overhangs %dx%d frame, clamped to %dx%d",
            frame.camera_id, bbox, w, h, x1 - x0, y1 - y0,
        )
    return frame.image[y0:y1, x0:x1]


class Ingestor:
    """Fetch-crop-classify-persist driver over one registry and one detector."""

    def __init__(self, registry: Registry, detector: Detector):
        self.registry = registry
        self.detector = detector
        self.health: dict[str, CameraHealth] = {}
        self._detector_lock = threading.Lock()

    def _camera_health(self, camera_id: str) -> CameraHealth:
        return self.health.setdefault(camera_id, CameraHealth())

    def ingest_camera(self, cam: CameraConfig, now: datetime | None = None) -> IngestStats:
        """One poll of one camera: fetch, classify its stalls, apply staleness."""
        now = now or datetime.now(timezone.utc)
        stats = IngestStats()
        health = self._camera_health(cam.camera_id)
        try:
            frame = fetch_snapshot(cam)
        except FetchError as exc:
            health.consecutive_failures += 1
            health.last_error = str(exc)
            stats.failures += 1
            log.warning("camera %s fetch failed: %s", cam.camera_id, exc)
        else:
            health.consecutive_failures = 0
            health.last_error = None
            health.last_success = frame.captured_at
            self.registry.store_frame(cam.camera_id, encode_png(frame.image), frame.captured_at)
            stalls = [
                s for s in self.registry.lot_status(cam.lot_id) if s.camera_id == cam.camera_id
            ]
            for stall in stalls:
                try:
                    patch = crop(frame, stall.bbox)
                    with self._detector_lock:
                        prob = float(self.detector(patch))
                    self.registry.record_observation(
                        cam.lot_id, stall.stall_id, encode_png(patch), prob, frame.captured_at
                    )
                    stats.stalls_updated += 1
                except CropError as exc:
                    stats.failures += 1
                    log.warning("stall %s/%s skipped: %s", cam.lot_id, stall.stall_id, exc)
        cutoff = now - timedelta(seconds=STALE_INTERVALS * cam.poll_interval_s)
        stats.marked_unknown += self.registry.mark_stale(cam.lot_id, cam.camera_id, cutoff)
        return stats

    def ingest_cycle(self, lot_id: str, now: datetime | None = None) -> IngestStats:
        """Poll every camera of a lot once; per-camera failures stay isolated."""
        cameras = self.registry.list_cameras(lot_id)
        if not cameras:
            raise ConfigError(f"lot {lot_id} has no cameras configured")
        total = IngestStats()
        for cam in cameras:
            stats = self.ingest_camera(cam, now)
            total.stalls_updated += stats.stalls_updated
            total.failures += stats.failures
            total.marked_unknown += stats.marked_unknown
        return total


@dataclass
class Scheduler:
    """One polling thread per camera, each on its own cadence."""

    ingestor: Ingestor
    cameras: list[CameraConfig]
    stop_event: threading.Event = field(default_factory=threading.Event)
    poll_counts: dict[str, int] = field(default_factory=dict)
    _threads: list[threading.Thread] = field(default_factory=list)

    def start(self):
        for cam in self.cameras:
            self.poll_counts[cam.camera_id] = 0
            t = threading.Thread(target=self._loop, args=(cam,), name=f"poll-{cam.camera_id}", daemon=True)
            self._threads.append(t)
            t.start()

    def _loop(self, cam: CameraConfig):
        while not self.stop_event.is_set():
            started = time.monotonic()
            try:
                self.ingestor.ingest_camera(cam)
            except Exception:
                log.exception("camera %s: poll cycle failed", cam.camera_id)
            self.poll_counts[cam.camera_id] += 1
            elapsed = time.monotonic() - started
            self.stop_event.wait(max(0.0, cam.poll_interval_s - elapsed))

    def stop(self, join_timeout: float = 30.0):
        """Signal shutdown and wait for in-flight cycles to finish."""
        self.stop_event.set()
        for t in self._threads:
            t.join(join_timeout)

    def run_until_stopped(self):
        self.start()
        try:
            while not self.stop_event.wait(0.5):
                pass
        finally:
            self.stop()


def run_scheduler(
    registry: Registry,
    detector: Detector,
    cameras: list[CameraConfig] | None = None,
    stop_event: threading.Event | None = None,
) -> Scheduler:
    """Build a Scheduler over the given (or all persisted) cameras; caller starts it."""
    cameras = cameras if cameras is not None else registry.list_cameras()
    if not cameras:
        raise ConfigError("no cameras configured")
    for cam in cameras:
        cam.validate()
    scheduler = Scheduler(Ingestor(registry, detector), cameras)
    if stop_event is not None:
        scheduler.stop_event = stop_event
    return scheduler


def make_model_detector(model) -> Detector:
    """Wrap a trained model as a crop -> occupied probability callable."""
    from .detector import predict, preprocess

    def detect(image: np.ndarray) -> float:
        return predict(model, preprocess(model, image)).occupied_prob

    return detect
