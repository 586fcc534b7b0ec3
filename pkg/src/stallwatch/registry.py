"""Persistent source of truth for lots, cameras, stalls, and latest status.

Backed by a single sqlite file (WAL mode) so the ingest service and the API
server can share it across processes. All public methods are safe to call
from multiple threads of one process; writes are serialized per connection.
"""

from __future__ import annotations

import sqlite3
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import NotFoundError, ValidationError

VACANT = "vacant"
OCCUPIED = "occupied"
UNKNOWN = "unknown"

# Forward-only migrations; PRAGMA user_version tracks which have been applied.
_MIGRATIONS = [
    """
    CREATE TABLE lots (
        lot_id TEXT PRIMARY KEY,
        display_name TEXT NOT NULL
    );
    CREATE TABLE stalls (
        lot_id TEXT NOT NULL REFERENCES lots(lot_id),
        stall_id INTEGER NOT NULL,
        x INTEGER NOT NULL, y INTEGER NOT NULL, w INTEGER NOT NULL, h INTEGER NOT NULL,
        camera_id TEXT NOT NULL,
        blob BLOB NOT NULL DEFAULT x'',
        status TEXT NOT NULL DEFAULT 'unknown',
        updated_at TEXT,
        PRIMARY KEY (lot_id, stall_id)
    );
    CREATE TABLE cameras (
        camera_id TEXT PRIMARY KEY,
        lot_id TEXT NOT NULL REFERENCES lots(lot_id),
        snapshot_url TEXT NOT NULL,
        poll_interval_s REAL NOT NULL DEFAULT 10.0,
        timeout_s REAL NOT NULL DEFAULT 5.0,
        username TEXT,
        password TEXT
    );
    CREATE TABLE frames (
        camera_id TEXT PRIMARY KEY REFERENCES cameras(camera_id),
        png BLOB NOT NULL,
        captured_at TEXT NOT NULL
    );
    """,
]


@dataclass
class Bbox:
    x: int
    y: int
    w: int
    h: int

    def validate(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ValidationError(f"bbox field {name} must be an integer, got {v!r}")
            if v < 0:
                raise ValidationError(f"bbox field {name} must be non-negative, got {v}")
        if self.w == 0 or self.h == 0:
            raise ValidationError(f"bbox must have positive extent, got {self.w}x{self.h}")


@dataclass
class StallRecord:
    lot_id: str
    stall_id: int
    bbox: Bbox
    camera_id: str
    blob: bytes = b""
    status: str = UNKNOWN
    updated_at: datetime | None = None


@dataclass
class LotRecord:
    lot_id: str
    display_name: str
    camera_ids: list[str] = field(default_factory=list)


@dataclass
class Summary:
    free: int
    total: int
    unknown: int


def _iso(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat(timespec="microseconds")


def _parse_iso(value: str | None) -> datetime | None:
    return datetime.fromisoformat(value) if value else None


class Registry:
    def __init__(self, path):
        self._path = str(path)
        self._lock = threading.RLock()
        if self._path != ":memory:":
            Path(self._path).parent.mkdir(parents=True, exist_ok=True)
        self._conn = sqlite3.connect(self._path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA busy_timeout = 5000")
        if self._path != ":memory:":
            self._conn.execute("PRAGMA journal_mode = WAL")
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._migrate()

    def close(self):
        with self._lock:
            self._conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _migrate(self):
        with self._lock, self._conn:
            version = self._conn.execute("PRAGMA user_version").fetchone()[0]
            for i in range(version, len(_MIGRATIONS)):
                self._conn.executescript(_MIGRATIONS[i])
                self._conn.execute(f"PRAGMA user_version = {i + 1}")

    # -- lots ---------------------------------------------------------------

    def create_lot(self, lot_id: str, display_name: str | None = None) -> LotRecord:
        if not lot_id:
            raise ValidationError("lot_id must be non-empty")
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO lots (lot_id, display_name) VALUES (?, ?) "
                "ON CONFLICT(lot_id) DO UPDATE SET display_name = excluded.display_name",
                (lot_id, display_name or lot_id),
            )
        return self.get_lot(lot_id)

    def get_lot(self, lot_id: str) -> LotRecord:
        with self._lock:
            row = self._conn.execute("SELECT * FROM lots WHERE lot_id = ?", (lot_id,)).fetchone()
            if row is None:
                raise NotFoundError(f"unknown lot: {lot_id}")
            cams = [
                r["camera_id"]
                for r in self._conn.execute(
                    "SELECT camera_id FROM cameras WHERE lot_id = ? ORDER BY camera_id", (lot_id,)
                )
            ]
        return LotRecord(row["lot_id"], row["display_name"], cams)

    def list_lots(self) -> list[LotRecord]:
        with self._lock:
            ids = [r["lot_id"] for r in self._conn.execute("SELECT lot_id FROM lots ORDER BY lot_id")]
        return [self.get_lot(i) for i in ids]

    # -- stalls ---------------------------------------------------------------

    def upsert_stall(self, lot_id: str, stall_id: int, bbox: Bbox, camera_id: str) -> StallRecord:
        """Create or rebind a stall; a changed bbox resets status to unknown."""
        bbox.validate()
        if not isinstance(stall_id, int) or stall_id < 0:
            raise ValidationError(f"stall_id must be a non-negative integer, got {stall_id!r}")
        self.get_lot(lot_id)
        with self._lock, self._conn:
            existing = self._conn.execute(
                "SELECT x, y, w, h FROM stalls WHERE lot_id = ? AND stall_id = ?",
                (lot_id, stall_id),
            ).fetchone()
            if existing is None:
                self._conn.execute(
                    "INSERT INTO stalls (lot_id, stall_id, x, y, w, h, camera_id) "
                    "VALUES (?, ?, ?, ?, ?, ?, ?)",
                    (lot_id, stall_id, bbox.x, bbox.y, bbox.w, bbox.h, camera_id),
                )
            else:
                changed = tuple(existing) != (bbox.x, bbox.y, bbox.w, bbox.h)
                self._conn.execute(
                    "UPDATE stalls SET x = ?, y = ?, w = ?, h = ?, camera_id = ?, "
                    "status = CASE WHEN ? THEN 'unknown' ELSE status END "
                    "WHERE lot_id = ? AND stall_id = ?",
                    (bbox.x, bbox.y, bbox.w, bbox.h, camera_id, changed, lot_id, stall_id),
                )
        return self.get_stall(lot_id, stall_id)

    def get_stall(self, lot_id: str, stall_id: int, include_blob: bool = True) -> StallRecord:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM stalls WHERE lot_id = ? AND stall_id = ?", (lot_id, stall_id)
            ).fetchone()
        if row is None:
            raise NotFoundError(f"unknown stall: {lot_id}/{stall_id}")
        return self._stall_from_row(row, include_blob)

    def delete_stall(self, lot_id: str, stall_id: int):
        with self._lock, self._conn:
            cur = self._conn.execute(
                "DELETE FROM stalls WHERE lot_id = ? AND stall_id = ?", (lot_id, stall_id)
            )
            if cur.rowcount == 0:
                raise NotFoundError(f"unknown stall: {lot_id}/{stall_id}")

    def record_observation(
        self, lot_id: str, stall_id: int, blob: bytes, occupied_prob: float, observed_at: datetime
    ) -> StallRecord:
        """Store the latest crop and derived status (occupied wins the 0.5 tie)."""
        status = OCCUPIED if occupied_prob >= 0.5 else VACANT
        with self._lock, self._conn:
            cur = self._conn.execute(
                "UPDATE stalls SET blob = ?, status = ?, updated_at = ? "
                "WHERE lot_id = ? AND stall_id = ?",
                (blob, status, _iso(observed_at), lot_id, stall_id),
            )
            if cur.rowcount == 0:
                raise NotFoundError(f"unknown stall: {lot_id}/{stall_id}")
        return self.get_stall(lot_id, stall_id)

    def lot_status(self, lot_id: str, include_blobs: bool = False) -> list[StallRecord]:
        self.get_lot(lot_id)
        with self._lock:
            rows = self._conn.execute(
                "SELECT * FROM stalls WHERE lot_id = ? ORDER BY stall_id", (lot_id,)
            ).fetchall()
        return [self._stall_from_row(r, include_blobs) for r in rows]

    def summary(self, lot_id: str) -> Summary:
        self.get_lot(lot_id)
        with self._lock:
            row = self._conn.execute(
                "SELECT COUNT(*) AS total, "
                "SUM(status = 'vacant') AS free, "
                "SUM(status = 'unknown') AS unknown "
                "FROM stalls WHERE lot_id = ?",
                (lot_id,),
            ).fetchone()
        return Summary(int(row["free"] or 0), int(row["total"]), int(row["unknown"] or 0))

    def mark_stale(self, lot_id: str, camera_id: str, cutoff: datetime) -> int:
        """Flip stalls of one camera to unknown when last observed before cutoff."""
        with self._lock, self._conn:
            cur = self._conn.execute(
                "UPDATE stalls SET status = 'unknown' "
                "WHERE lot_id = ? AND camera_id = ? AND status != 'unknown' "
                "AND (updated_at IS NULL OR updated_at < ?)",
                (lot_id, camera_id, _iso(cutoff)),
            )
            return cur.rowcount

    def _stall_from_row(self, row, include_blob: bool) -> StallRecord:
        return StallRecord(
            lot_id=row["lot_id"],
            stall_id=row["stall_id"],
            bbox=Bbox(row["x"], row["y"], row["w"], row["h"]),
            camera_id=row["camera_id"],
            blob=bytes(row["blob"]) if include_blob else b"",
            status=row["status"],
            updated_at=_parse_iso(row["updated_at"]),
        )

    # -- cameras and frames ---------------------------------------------------

    def register_camera(self, cam) -> None:
        """Upsert a CameraConfig; its lot must already exist."""
        cam.validate()
        self.get_lot(cam.lot_id)
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO cameras (camera_id, lot_id, snapshot_url, poll_interval_s, timeout_s, username, password) "
                "VALUES (?, ?, ?, ?, ?, ?, ?) "
                "ON CONFLICT(camera_id) DO UPDATE SET lot_id = excluded.lot_id, "
                "snapshot_url = excluded.snapshot_url, poll_interval_s = excluded.poll_interval_s, "
                "timeout_s = excluded.timeout_s, username = excluded.username, password = excluded.password",
                (cam.camera_id, cam.lot_id, cam.snapshot_url, cam.poll_interval_s,
                 cam.timeout_s, cam.username, cam.password),
            )

    def get_camera(self, camera_id: str):
        from .ingest import CameraConfig

        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM cameras WHERE camera_id = ?", (camera_id,)
            ).fetchone()
        if row is None:
            raise NotFoundError(f"unknown camera: {camera_id}")
        return CameraConfig(
            camera_id=row["camera_id"],
            lot_id=row["lot_id"],
            snapshot_url=row["snapshot_url"],
            poll_interval_s=row["poll_interval_s"],
            timeout_s=row["timeout_s"],
            username=row["username"],
            password=row["password"],
        )

    def list_cameras(self, lot_id: str | None = None):
        with self._lock:
            if lot_id is None:
                rows = self._conn.execute("SELECT camera_id FROM cameras ORDER BY camera_id").fetchall()
            else:
                rows = self._conn.execute(
                    "SELECT camera_id FROM cameras WHERE lot_id = ? ORDER BY camera_id", (lot_id,)
                ).fetchall()
        return [self.get_camera(r["camera_id"]) for r in rows]

    def store_frame(self, camera_id: str, png: bytes, captured_at: datetime):
        self.get_camera(camera_id)
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO frames (camera_id, png, captured_at) VALUES (?, ?, ?) "
                "ON CONFLICT(camera_id) DO UPDATE SET png = excluded.png, captured_at = excluded.captured_at",
                (camera_id, png, _iso(captured_at)),
            )

    def latest_frame(self, camera_id: str) -> tuple[bytes, datetime] | None:
        self.get_camera(camera_id)
        with self._lock:
            row = self._conn.execute(
                "SELECT png, captured_at FROM frames WHERE camera_id = ?", (camera_id,)
            ).fetchone()
        if row is None:
            return None
        return bytes(row["png"]), _parse_iso(row["captured_at"])
