"""FastAPI adapter: POST /v1/segment + GET /v1/health.

Request body: {"image_png_b64": ..., "point": {"x":..,"y":..,"label":1},
"box": [x1,y1,x2,y2]}; response: {"width":W,"height":H,"runs":[[start,len],...]}
with row-major RLE runs. Schema violations are HTTP 400, images over the
configured pixel cap are 413, and 503 is returned until the model has
loaded. Requests run concurrently up to max_batch; model invocation is
serialized per device.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import io
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from PIL import Image

from .models import SegmentationModel, load_model


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8008
    model: str = "stub"
    device: str = "cpu"
    max_batch: int = 4
    max_pixels: int = 4_000_000


def _decode_png(blob: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(blob)) as img:
        if img.mode in ("I;16", "I;16B", "I"):
            return np.asarray(img, dtype=np.float64) / 65535.0
        if img.mode != "L":
            img = img.convert("L")
        return np.asarray(img, dtype=np.float64) / 255.0


def _encode_runs(mask: np.ndarray) -> list[list[int]]:
    flat = mask.ravel().astype(np.uint8)
    edges = np.flatnonzero(np.diff(np.concatenate(([0], flat, [0]))))
    return [[int(s), int(e - s)] for s, e in zip(edges[0::2], edges[1::2])]


def _bad(detail: str) -> HTTPException:
    return HTTPException(status_code=400, detail=detail)


def _parse_request(body: object) -> tuple[bytes, tuple[int, int], tuple[int, int, int, int]]:
    if not isinstance(body, dict):
        raise _bad("body must be a JSON object")
    missing = {"image_png_b64", "point", "box"} - body.keys()
    if missing:
        raise _bad(f"missing fields: {sorted(missing)}")
    if not isinstance(body["image_png_b64"], str):
        raise _bad("image_png_b64 must be a base64 string")
    try:
        png = base64.b64decode(body["image_png_b64"], validate=True)
    except (binascii.Error, ValueError) as exc:
        raise _bad(f"invalid base64 image: {exc}")
    point = body["point"]
    if (
        not isinstance(point, dict)
        or not {"x", "y"} <= point.keys()
        or not all(isinstance(point[k], int) for k in ("x", "y"))
    ):
        raise _bad("point must be {'x': int, 'y': int, 'label': 1}")
    if point.get("label", 1) != 1:
        raise _bad("only a single positive point (label 1) is supported")
    box = body["box"]
    if not (isinstance(box, list) and len(box) == 4 and all(isinstance(v, int) for v in box)):
        raise _bad("box must be [x1, y1, x2, y2] integers")
    if box[0] >= box[2] or box[1] >= box[3]:
        raise _bad("box has non-positive area")
    return png, (point["x"], point["y"]), tuple(box)


def create_app(config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig()
    state: dict[str, SegmentationModel | None] = {"model": None}
    request_pool = threading.BoundedSemaphore(config.max_batch)
    device_lock = threading.Lock()  # one invocation at a time per device

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        # raises on unknown identifiers: the server refuses to start
        state["model"] = load_model(config.model)
        yield

    app = FastAPI(title="segserver", docs_url=None, redoc_url=None, lifespan=lifespan)

    @app.get("/v1/health")
    def health() -> JSONResponse:
        if state["model"] is None:
            return JSONResponse({"status": "loading"}, status_code=503)
        return JSONResponse({"status": "ok"})

    @app.post("/v1/segment")
    async def handle_segment(request: Request) -> JSONResponse:
        model = state["model"]
        if model is None:
            raise HTTPException(status_code=503, detail="model is still loading")
        try:
            body = await request.json()
        except Exception:
            raise _bad("body is not valid JSON")
        png, point, box = _parse_request(body)
        try:
            with Image.open(io.BytesIO(png)) as probe:
                width, height = probe.size
        except Exception as exc:
            raise _bad(f"undecodable PNG: {exc}")
        if width * height > config.max_pixels:
            raise HTTPException(status_code=413, detail=f"image exceeds {config.max_pixels} pixels")
        if not (0 <= point[0] < width and 0 <= point[1] < height):
            raise _bad("point outside the image")
        if not (0 <= box[0] and 0 <= box[1] and box[2] <= width and box[3] <= height):
            raise _bad("box outside the image")
        image = _decode_png(png)
        with request_pool:
            with device_lock:
                soft = model.predict(image, point, box)
        mask = soft >= model.threshold
        return JSONResponse({"width": width, "height": height, "runs": _encode_runs(mask)})

    return app


def main(argv: list[str] | None = None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(description="promptable-segmentation adapter service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--model", default="stub")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-batch", type=int, default=4)
    parser.add_argument("--max-pixels", type=int, default=4_000_000)
    args = parser.parse_args(argv)
    config = ServerConfig(
        host=args.host, port=args.port, model=args.model, device=args.device,
        max_batch=args.max_batch, max_pixels=args.max_pixels,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
