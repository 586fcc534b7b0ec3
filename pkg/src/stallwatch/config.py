"""TOML configuration shared by the serve and ingest entry points.

Layout::

    [server]
    listen = "127.0.0.1:8080"
    data_dir = "data"
    admin_token = "change-me"
    model = "model.psvi"
    ui_dir = "frontend/dist"     # optional static admin UI

    [lot.campus]
    display_name = "Campus Lot"

    [camera.cam-north]
    lot = "campus"
    snapshot_url = "http://192.0.2.10/snapshot.jpg"
    poll_interval_s = 10.0
    timeout_s = 5.0
    username = "viewer"          # optional basic auth
    password = "secret"
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .ingest import CameraConfig
from .registry import Registry


@dataclass
class ServerConfig:
    listen: str = "127.0.0.1:8080"
    data_dir: str = "data"
    admin_token: str | None = None
    model: str | None = None
    ui_dir: str | None = None


@dataclass
class LotDef:
    lot_id: str
    display_name: str


@dataclass
class AppConfig:
    server: ServerConfig = field(default_factory=ServerConfig)
    lots: list[LotDef] = field(default_factory=list)
    cameras: list[CameraConfig] = field(default_factory=list)

    def registry_path(self) -> Path:
        data_dir = Path(self.server.data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        return data_dir / "stallwatch.db"


def load_config(path) -> AppConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc

    srv = raw.get("server", {})
    server = ServerConfig(
        listen=srv.get("listen", "127.0.0.1:8080"),
        data_dir=srv.get("data_dir", "data"),
        admin_token=srv.get("admin_token"),
        model=srv.get("model"),
        ui_dir=srv.get("ui_dir"),
    )

    lots = [
        LotDef(lot_id, section.get("display_name", lot_id))
        for lot_id, section in raw.get("lot", {}).items()
    ]
    lot_ids = {l.lot_id for l in lots}

    cameras = []
    for cam_id, section in raw.get("camera", {}).items():
        if "lot" not in section or "snapshot_url" not in section:
            raise ConfigError(f"camera {cam_id} needs both 'lot' and 'snapshot_url'")
        if section["lot"] not in lot_ids:
            raise ConfigError(f"camera {cam_id} references undefined lot {section['lot']!r}")
        cam = CameraConfig(
            camera_id=cam_id,
            lot_id=section["lot"],
            snapshot_url=section["snapshot_url"],
            poll_interval_s=float(section.get("poll_interval_s", 10.0)),
            timeout_s=float(section.get("timeout_s", 5.0)),
            username=section.get("username"),
            password=section.get("password"),
        )
        cam.validate()
        cameras.append(cam)
    return AppConfig(server, lots, cameras)


def apply_config(registry: Registry, cfg: AppConfig):
    """Seed lots and cameras from the config file into the registry."""
    for lot in cfg.lots:
        registry.create_lot(lot.lot_id, lot.display_name)
    for cam in cfg.cameras:
        registry.register_camera(cam)
