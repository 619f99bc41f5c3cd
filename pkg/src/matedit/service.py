"""HTTP service exposing interactive edits: /v1/health, /v1/attributes,
/v1/edit.  One edit runs at a time; excess requests queue FIFO up to a bound
and are rejected with 429 beyond it."""

from __future__ import annotations

import base64
import io
import queue
import threading
import time
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel, Field

from . import __version__
from .diffusion import GuidanceConfig
from .materials import ATTRIBUTE_RANGES, OVERDRIVE_RANGE, EditStrength
from .net import checkpoint_hash, load_model
from .render import DISPLAY, ImageBuffer
from .traineval import model_edit


class GuidanceSpec(BaseModel):
    image: float = 1.0
    text: float = 1.0


class EditRequestBody(BaseModel):
    image: str                       # base64 PNG
    strengths: dict[str, float]
    mask: Optional[str] = None       # base64 PNG, binary
    object_class: str = ""
    steps: int = Field(default=20, ge=1, le=200)
    guidance: GuidanceSpec = Field(default_factory=GuidanceSpec)
    seed: Optional[int] = None


def _decode_png_b64(data: str, what: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise ValueError(f"cannot decode {what} as base64 PNG: {exc}") from exc


def _encode_png_b64(image: ImageBuffer) -> str:
    data = np.clip(image.pixels * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def letterbox(pixels: np.ndarray, size: int):
    """Aspect-preserving resize onto a size x size black canvas.

    Returns (canvas, box) with box = (x0, y0, w, h) of the valid content.
    """
    h, w = pixels.shape[:2]
    scale = size / max(h, w)
    nw, nh = max(1, round(w * scale)), max(1, round(h * scale))
    im = Image.fromarray(np.clip(pixels * 255.0 + 0.5, 0, 255).astype(np.uint8))
    im = im.resize((nw, nh), Image.BILINEAR)
    canvas = np.zeros((size, size, 3), dtype=np.float64)
    x0 = (size - nw) // 2
    y0 = (size - nh) // 2
    canvas[y0:y0 + nh, x0:x0 + nw] = np.asarray(im, dtype=np.float64) / 255.0
    return canvas, (x0, y0, nw, nh)


class _Job:
    def __init__(self, fn):
        self.fn = fn
        self.done = threading.Event()
        self.result = None
        self.error = None


class EditWorker:
    """Single inference worker with a bounded FIFO queue."""

    def __init__(self, queue_limit: int = 8):
        self.jobs: queue.Queue = queue.Queue(maxsize=queue_limit)
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self):
        while True:
            job = self.jobs.get()
            try:
                job.result = job.fn()
            except Exception as exc:  # surfaced to the waiting handler
                job.error = exc
            job.done.set()

    def submit(self, fn):
        job = _Job(fn)
        try:
            self.jobs.put_nowait(job)
        except queue.Full:
            return None
        return job


def create_app(model_path, queue_limit: int = 8, frontend_dir=None) -> FastAPI:
    denoiser = load_model(model_path)
    model_hash = checkpoint_hash(model_path)
    worker = EditWorker(queue_limit)
    app = FastAPI(title="matedit", version=__version__)
    app.state.worker = worker
    app.state.denoiser = denoiser

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"detail": exc.errors()})

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "version": __version__, "model_hash": model_hash}

    @app.get("/v1/attributes")
    def attributes():
        return {
            "attributes": [
                {"name": a,
                 "min": ATTRIBUTE_RANGES[a][0], "max": ATTRIBUTE_RANGES[a][1],
                 "overdrive_min": OVERDRIVE_RANGE[0],
                 "overdrive_max": OVERDRIVE_RANGE[1]}
                for a in denoiser.active_attributes
            ],
            "object_classes": sorted({k.split("|", 1)[1] for k in denoiser.vocab}),
            "resolution": denoiser.train_resolution,
            "default_steps": 20,
        }

    @app.post("/v1/edit")
    def edit(body: EditRequestBody):
        supported = set(denoiser.active_attributes)
        for attr in body.strengths:
            if attr not in supported:
                return JSONResponse(status_code=422, content={
                    "detail": f"unsupported attribute {attr!r}; "
                              f"valid attributes: {sorted(supported)}"})
        has_mask = body.mask is not None
        for attr, value in body.strengths.items():
            lo, hi = OVERDRIVE_RANGE if has_mask else ATTRIBUTE_RANGES[attr]
            if not (lo <= value <= hi):
                return JSONResponse(status_code=400, content={
                    "detail": f"strength {value} for {attr!r} outside "
                              f"[{lo}, {hi}]" + ("" if has_mask else
                                                 " (over-drive requires a mask)")})
        try:
            pixels = _decode_png_b64(body.image, "image")
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        original_size = [pixels.shape[1], pixels.shape[0]]
        res = denoiser.train_resolution
        canvas, box = letterbox(pixels, res)
        context = ImageBuffer(canvas, DISPLAY)
        mask_arr = None
        if has_mask:
            try:
                mask_px = _decode_png_b64(body.mask, "mask")
            except ValueError as exc:
                return JSONResponse(status_code=400, content={"detail": str(exc)})
            if mask_px.shape[:2] != tuple(pixels.shape[:2]):
                return JSONResponse(status_code=400, content={
                    "detail": f"mask size {mask_px.shape[1]}x{mask_px.shape[0]} "
                              f"!= image size {original_size[0]}x{original_size[1]}"})
            mask_canvas, _ = letterbox(mask_px, res)
            mask_arr = (mask_canvas.mean(axis=2) > 0.5).astype(np.float64)
        strength = EditStrength.from_mapping(body.strengths)
        seed = body.seed if body.seed is not None else int(time.time_ns() % 2**31)
        object_class = body.object_class
        if object_class:
            classes = {k.split("|", 1)[1] for k in denoiser.vocab}
            if object_class not in classes:
                return JSONResponse(status_code=422, content={
                    "detail": f"unknown object_class {object_class!r}; "
                              f"known: {sorted(classes)}"})
        guidance = GuidanceConfig(s_image=body.guidance.image,
                                  s_text=body.guidance.text)

        def run():
            t0 = time.time()
            out = model_edit(denoiser, context, strength,
                             object_class or None, steps=body.steps,
                             guidance=guidance, mask=mask_arr, seed=seed)
            return out, (time.time() - t0) * 1000.0

        job = worker.submit(run)
        if job is None:
            return JSONResponse(status_code=429,
                                content={"detail": "edit queue is full"})
        job.done.wait()
        if job.error is not None:
            return JSONResponse(status_code=500, content={"detail": str(job.error)})
        out, elapsed_ms = job.result
        return {"image": _encode_png_b64(out), "elapsed_ms": elapsed_ms,
                "seed": seed, "original_size": original_size,
                "letterbox": list(box)}

    if frontend_dir and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True),
                  name="frontend")
    return app


def serve(model_path, port: int = 8000, queue_limit: int = 8,
          frontend_dir=None, host: str = "127.0.0.1"):
    import uvicorn
    app = create_app(model_path, queue_limit, frontend_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
