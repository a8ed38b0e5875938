"""File formats: SODT tensors, mask JSON, grayscale PNG/PGM rasters.

SODT layout: ASCII magic line ``SODT1``, one JSON header line
``{"dtype":"f32","shape":[...]}``, a newline, then raw little-endian
32-bit floats. Round-trips are bit-exact.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .core import BinaryMask, GrayImage
from .errors import (
    MalformedHeaderError,
    NonFiniteValueError,
    ShapeMismatchError,
)

_MAGIC = b"SODT1\n"


def write_tensor(tensor: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(tensor, dtype="<f4")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("refusing to write non-finite tensor")
    header = json.dumps({"dtype": "f32", "shape": list(arr.shape)}).encode("ascii")
    atomic_write(path, _MAGIC + header + b"\n" + arr.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(_MAGIC):
        raise MalformedHeaderError(f"{path}: missing SODT1 magic")
    nl = blob.find(b"\n", len(_MAGIC))
    if nl < 0:
        raise MalformedHeaderError(f"{path}: missing header line")
    try:
        header = json.loads(blob[len(_MAGIC) : nl])
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f"{path}: header is not JSON ({exc})") from exc
    if not isinstance(header, dict) or header.get("dtype") != "f32":
        raise MalformedHeaderError(f"{path}: unsupported header {header!r}")
    shape = header.get("shape")
    if (
        not isinstance(shape, list)
        or not shape
        or not all(isinstance(n, int) and n > 0 for n in shape)
    ):
        raise MalformedHeaderError(f"{path}: bad shape {shape!r}")
    payload = blob[nl + 1 :]
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise ShapeMismatchError(
            f"{path}: header declares {expected} payload bytes, found {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError(f"{path}: payload contains non-finite values")
    return arr.copy()


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    doc = {"width": mask.width, "height": mask.height, "runs": [list(r) for r in mask.runs]}
    atomic_write(path, json.dumps(doc).encode("ascii"))


def load_mask(path: str | Path) -> BinaryMask:
    doc = json.loads(Path(path).read_text())
    return mask_from_wire(doc)


def mask_from_wire(doc: dict) -> BinaryMask:
    """Build a mask from the JSON wire schema {"width", "height", "runs"}."""
    try:
        runs = tuple((int(s), int(n)) for s, n in doc["runs"])
        return BinaryMask(width=int(doc["width"]), height=int(doc["height"]), runs=runs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed mask document: {exc}") from exc


def mask_to_wire(mask: BinaryMask) -> dict:
    return {"width": mask.width, "height": mask.height, "runs": [list(r) for r in mask.runs]}


def load_image(path: str | Path) -> GrayImage:
    """Load an 8/16-bit grayscale PNG or binary PGM (P5), normalized to [0, 1]."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".ppm"):
        return _read_pgm(path)
    with Image.open(path) as img:
        if img.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(img, dtype=np.float64)
            return GrayImage(arr / 65535.0)
        if img.mode != "L":
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.float64)
        return GrayImage(arr / 255.0)


def save_png(image: GrayImage, path: str | Path, bit_depth: int = 16) -> None:
    buf = io.BytesIO()
    _encode_png(image, buf, bit_depth)
    atomic_write(path, buf.getvalue())


def png_bytes(image: GrayImage, bit_depth: int = 16) -> bytes:
    buf = io.BytesIO()
    _encode_png(image, buf, bit_depth)
    return buf.getvalue()


def _encode_png(image: GrayImage, buf: io.BytesIO, bit_depth: int) -> None:
    if bit_depth == 16:
        arr = np.round(image.data * 65535.0).astype("<u2")
        img = Image.frombytes("I;16", (image.width, image.height), arr.tobytes())
        img.save(buf, format="PNG")
    elif bit_depth == 8:
        arr = np.round(image.data * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(buf, format="PNG")
    else:
        raise ValueError(f"unsupported PNG bit depth {bit_depth}")


def image_from_png_bytes(blob: bytes) -> GrayImage:
    with Image.open(io.BytesIO(blob)) as img:
        if img.mode in ("I;16", "I;16B", "I"):
            return GrayImage(np.asarray(img, dtype=np.float64) / 65535.0)
        if img.mode != "L":
            img = img.convert("L")
        return GrayImage(np.asarray(img, dtype=np.float64) / 255.0)


def _read_pgm(path: Path) -> GrayImage:
    blob = path.read_bytes()
    fields: list[bytes] = []
    pos = 0
    # header = 4 whitespace-separated tokens, '#' comments run to end of line
    while len(fields) < 4 and pos < len(blob):
        ch = blob[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            pos = blob.find(b"\n", pos) + 1 or len(blob)
        else:
            end = pos
            while end < len(blob) and not blob[end : end + 1].isspace():
                end += 1
            fields.append(blob[pos:end])
            pos = end
    if len(fields) != 4 or fields[0] != b"P5":
        raise MalformedHeaderError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(f) for f in fields[1:])
    pos += 1  # single whitespace byte after maxval
    if maxval <= 0 or maxval > 65535:
        raise MalformedHeaderError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    expected = width * height * dtype.itemsize
    payload = blob[pos : pos + expected]
    if len(payload) != expected:
        raise ShapeMismatchError(f"{path}: truncated PGM payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return GrayImage(arr.astype(np.float64) / maxval)


def save_pgm(image: GrayImage, path: str | Path) -> None:
    arr = np.round(image.data * 255.0).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    atomic_write(path, header + arr.tobytes())


def atomic_write(path: str | Path, payload: bytes) -> None:
    """Write via temp file + rename so partial files are never observable."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))
