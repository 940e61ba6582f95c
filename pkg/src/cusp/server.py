"""HTTP inference service: stateless single-image editing over JSON, plus
model metadata and liveness endpoints. Handlers share one read-only model;
a lock serializes inference so concurrent edits behave as if queued."""

from __future__ import annotations

import asyncio
import base64
import binascii
import io
import logging
import os
import threading
import time
import uuid
from pathlib import Path

import torch
from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field
from starlette.concurrency import run_in_threadpool

from .checkpoint import FORMAT_TAG
from .data import image_to_tensor, tensor_to_image
from .errors import ContractError
from .masking import BlurParams, mask_png_bytes, resize_mask
from .model import CuspModel, forward_edit

log = logging.getLogger(__name__)

ENV_CKPT = "CUSP_CKPT"
MAX_IMAGE_B64 = 8_000_000      # characters of base64 payload
MAX_IMAGE_PIXELS = 4096 * 4096


class EditRequest(BaseModel):
    image: str = Field(description="base64-encoded PNG")
    target_age: int
    sigma_m: float
    sigma_g: float
    return_mask: bool = False
    seed: int = 0


class EditResponse(BaseModel):
    image_b64: str
    mask_b64: str | None = None
    latency_ms: float


class ModelInfo(BaseModel):
    resolution: int
    age_range: tuple[int, int]
    sigma_max: float
    ckpt_tag: str


class ErrorResponse(BaseModel):
    error: str
    id: str | None = None


SCHEMA_MODELS = (EditRequest, EditResponse, ModelInfo, ErrorResponse)


def export_schemas(docs_dir) -> list[Path]:
    """Write the wire-contract JSON schemas, one file per message type."""
    import json

    out = Path(docs_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for model in SCHEMA_MODELS:
        path = out / f"{model.__name__}.schema.json"
        path.write_text(json.dumps(model.model_json_schema(), indent=2, sort_keys=True) + "\n")
        paths.append(path)
    return paths


def _error(status: int, message: str, opaque_id: str | None = None) -> JSONResponse:
    body = {"error": message}
    if opaque_id is not None:
        body["id"] = opaque_id
    return JSONResponse(body, status_code=status)


class _Http(Exception):
    def __init__(self, status, message):
        self.status = status
        self.message = message


def _decode_image(b64: str, resolution: int) -> torch.Tensor:
    from PIL import Image, UnidentifiedImageError

    if len(b64) > MAX_IMAGE_B64:
        raise _Http(413, "image payload too large")
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError):
        raise _Http(400, "image is not valid base64")
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except (UnidentifiedImageError, OSError):
        raise _Http(400, "payload is not a decodable image")
    if img.width * img.height > MAX_IMAGE_PIXELS:
        raise _Http(413, "image dimensions too large")
    return image_to_tensor(img, resolution)


def _encode_png(image: torch.Tensor) -> str:
    buf = io.BytesIO()
    tensor_to_image(image).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(model: CuspModel, timeout_s: float = 60.0, static_dir=None) -> FastAPI:
    app = FastAPI(title="cusp inference service")
    cfg = model.cfg
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    lock = threading.Lock()
    app.state.timeout_s = timeout_s

    @app.exception_handler(RequestValidationError)
    async def _on_validation(request, exc):
        return _error(400, f"invalid request: {exc.errors()[0].get('msg', 'bad input')}")

    def _do_edit(req: EditRequest) -> EditResponse:
        start = time.perf_counter()
        if not (0.0 <= req.sigma_m <= cfg.sigma_max and 0.0 <= req.sigma_g <= cfg.sigma_max):
            raise _Http(400, f"sigma values must lie in [0, {cfg.sigma_max}]")
        if not (cfg.age_min <= req.target_age <= cfg.age_max):
            raise _Http(400, f"target_age must lie in [{cfg.age_min}, {cfg.age_max}]")
        x = _decode_image(req.image, cfg.resolution).unsqueeze(0)
        blur = BlurParams(req.sigma_m, req.sigma_g)
        with lock:
            img, mask = forward_edit(model, x, [req.target_age], blur, noise_seed=req.seed)
        mask_b64 = None
        if req.return_mask:
            m = resize_mask(mask.values, cfg.resolution, cfg.resolution)
            mask_b64 = base64.b64encode(mask_png_bytes(m[0])).decode("ascii")
        return EditResponse(
            image_b64=_encode_png(img[0]),
            mask_b64=mask_b64,
            latency_ms=(time.perf_counter() - start) * 1000.0,
        )

    @app.post("/edit", response_model=EditResponse, responses={400: {"model": ErrorResponse}})
    async def edit(req: EditRequest):
        try:
            return await asyncio.wait_for(
                run_in_threadpool(_do_edit, req), timeout=app.state.timeout_s
            )
        except asyncio.TimeoutError:
            return _error(503, "edit timed out")
        except _Http as e:
            return _error(e.status, e.message)
        except ContractError as e:
            return _error(400, str(e))
        except Exception:
            opaque = uuid.uuid4().hex
            log.exception("internal fault id=%s", opaque)
            return _error(500, "internal error", opaque)

    @app.get("/model/info", response_model=ModelInfo)
    async def model_info():
        return ModelInfo(
            resolution=cfg.resolution,
            age_range=(cfg.age_min, cfg.age_max),
            sigma_max=cfg.sigma_max,
            ckpt_tag=FORMAT_TAG,
        )

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        # mounted last so the API routes above win; serves a built browser UI
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def resolve_checkpoint(path=None) -> Path:
    path = path or os.environ.get(ENV_CKPT)
    if not path:
        raise ContractError(f"no checkpoint given and {ENV_CKPT} unset")
    return Path(path)


def serve(ckpt_path=None, host: str = "127.0.0.1", port: int = 8000, timeout_s: float = 60.0,
          static_dir=None):
    import uvicorn

    from .training import load_editor

    model, _, step = load_editor(resolve_checkpoint(ckpt_path))
    log.info("serving checkpoint at step %d on %s:%d", step, host, port)
    uvicorn.run(create_app(model, timeout_s=timeout_s, static_dir=static_dir),
                host=host, port=port)
