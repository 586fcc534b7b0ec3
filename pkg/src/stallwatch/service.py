"""HTTP API over the registry: status queries, summaries, admin ROI editing, frames.

All error bodies share one shape, {"code", "message"}. Read endpoints are
open; mutating endpoints require the X-Admin-Token header. Handlers never
talk to cameras: frames come from the registry's cache.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Header, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import NotFoundError, ValidationError
from .ingest import CameraConfig
from .registry import Bbox, Registry, StallRecord


class ApiError(Exception):
    def __init__(self, http_status: int, code: str, message: str):
        self.http_status = http_status
        self.code = code
        self.message = message
        super().__init__(message)


class BboxBody(BaseModel):
    x: int
    y: int
    w: int
    h: int


class StallBody(BaseModel):
    bbox: BboxBody
    camera_id: str


class LotBody(BaseModel):
    lot_id: str
    display_name: str | None = None


class CameraBody(BaseModel):
    camera_id: str
    lot_id: str
    snapshot_url: str
    poll_interval_s: float = 10.0
    timeout_s: float = 5.0
    username: str | None = None
    password: str | None = None


def _stall_json(s: StallRecord) -> dict:
    return {
        "stall_id": s.stall_id,
        "bbox": {"x": s.bbox.x, "y": s.bbox.y, "w": s.bbox.w, "h": s.bbox.h},
        "camera_id": s.camera_id,
        "status": s.status,
        "updated_at": s.updated_at.isoformat() if s.updated_at else None,
    }


def create_app(registry: Registry, admin_token: str, ui_dir: str | None = None) -> FastAPI:
    if not admin_token:
        raise ValidationError("an admin token is required to mount the API")
    app = FastAPI(title="stallwatch", docs_url=None, redoc_url=None)

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse({"code": exc.code, "message": exc.message}, status_code=exc.http_status)

    @app.exception_handler(RequestValidationError)
    async def _body_error(request: Request, exc: RequestValidationError):
        return JSONResponse({"code": "invalid_body", "message": str(exc.errors()[:1])}, status_code=422)

    @app.exception_handler(404)
    async def _route_404(request: Request, exc):
        return JSONResponse({"code": "not_found", "message": "no such route"}, status_code=404)

    def require_admin(token: str | None):
        if token != admin_token:
            raise ApiError(401, "unauthorized", "missing or wrong X-Admin-Token header")

    def get_lot(lot_id: str):
        try:
            return registry.get_lot(lot_id)
        except NotFoundError:
            raise ApiError(404, "lot_not_found", f"unknown lot: {lot_id}")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/api/lots")
    def list_lots():
        return [
            {"lot_id": l.lot_id, "display_name": l.display_name, "camera_ids": l.camera_ids}
            for l in registry.list_lots()
        ]

    @app.post("/api/lots")
    def create_lot(body: LotBody, x_admin_token: str | None = Header(default=None)):
        require_admin(x_admin_token)
        try:
            lot = registry.create_lot(body.lot_id, body.display_name)
        except ValidationError as exc:
            raise ApiError(422, "invalid_lot", str(exc))
        return {"lot_id": lot.lot_id, "display_name": lot.display_name, "camera_ids": lot.camera_ids}

    @app.get("/api/lots/{lot_id}/stalls")
    def lot_stalls(lot_id: str):
        get_lot(lot_id)
        return [_stall_json(s) for s in registry.lot_status(lot_id)]

    @app.get("/api/lots/{lot_id}/summary")
    def lot_summary(lot_id: str):
        get_lot(lot_id)
        s = registry.summary(lot_id)
        return {"free": s.free, "total": s.total, "unknown": s.unknown}

    @app.put("/api/lots/{lot_id}/stalls/{stall_id}")
    def put_stall(
        lot_id: str, stall_id: int, body: StallBody, x_admin_token: str | None = Header(default=None)
    ):
        require_admin(x_admin_token)
        get_lot(lot_id)
        bbox = Bbox(body.bbox.x, body.bbox.y, body.bbox.w, body.bbox.h)
        try:
            stall = registry.upsert_stall(lot_id, stall_id, bbox, body.camera_id)
        except ValidationError as exc:
            raise ApiError(422, "invalid_bbox", str(exc))
        return _stall_json(stall)

    @app.delete("/api/lots/{lot_id}/stalls/{stall_id}")
    def delete_stall(lot_id: str, stall_id: int, x_admin_token: str | None = Header(default=None)):
        require_admin(x_admin_token)
        get_lot(lot_id)
        try:
            registry.delete_stall(lot_id, stall_id)
        except NotFoundError:
            raise ApiError(404, "stall_not_found", f"unknown stall: {lot_id}/{stall_id}")
        return {"deleted": True}

    @app.get("/api/lots/{lot_id}/cameras/{camera_id}/frame")
    def camera_frame(lot_id: str, camera_id: str):
        get_lot(lot_id)
        try:
            cached = registry.latest_frame(camera_id)
        except NotFoundError:
            raise ApiError(404, "camera_not_found", f"unknown camera: {camera_id}")
        if cached is None:
            raise ApiError(503, "no_frame_yet", f"camera {camera_id} has not delivered a frame yet")
        png, captured_at = cached
        return Response(
            content=png, media_type="image/png", headers={"X-Captured-At": captured_at.isoformat()}
        )

    @app.post("/api/cameras")
    def register_camera(body: CameraBody, x_admin_token: str | None = Header(default=None)):
        require_admin(x_admin_token)
        cam = CameraConfig(
            camera_id=body.camera_id,
            lot_id=body.lot_id,
            snapshot_url=body.snapshot_url,
            poll_interval_s=body.poll_interval_s,
            timeout_s=body.timeout_s,
            username=body.username,
            password=body.password,
        )
        try:
            registry.register_camera(cam)
        except NotFoundError:
            raise ApiError(404, "lot_not_found", f"unknown lot: {body.lot_id}")
        except ValidationError as exc:
            raise ApiError(422, "invalid_camera", str(exc))
        return {"camera_id": cam.camera_id, "lot_id": cam.lot_id, "snapshot_url": cam.snapshot_url}

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        ui_path = Path(ui_dir)
        if ui_path.is_dir():
            app.mount("/ui", StaticFiles(directory=str(ui_path), html=True), name="ui")

    return app
