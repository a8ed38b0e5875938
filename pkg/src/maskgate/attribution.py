"""Per-detection attribution maps and salient-point extraction.

Integrated gradients uses a midpoint Riemann approximation of the path
integral from a baseline image to the input; grad-cam pools feature-map
gradients over the detection's footprint into channel weights. Both
emit maps that are zero outside the detection box.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core import BBox, Detection, GrayImage
from .errors import ShapeMismatchError
from .fileio import atomic_write_text, read_tensor
from .toymodel import ScorerTrace, ToyScorer, score


class AttributionMethod(Enum):
    IG = "ig"
    GRADCAM = "gradcam"
    EXTERNAL = "external"


@dataclass(frozen=True)
class AttributionMap:
    """Signed per-pixel contributions for one instance, zero outside its box."""

    instance_id: int
    box: BBox
    values: np.ndarray  # [H, W]
    method: AttributionMethod

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected [H, W] values, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("attribution values must be finite")
        outside = arr.copy()
        outside[self.box.y_min : self.box.y_max, self.box.x_min : self.box.x_max] = 0.0
        if np.any(outside != 0.0):
            raise ValueError("attribution values must be zero outside the instance box")
        if self.method is AttributionMethod.GRADCAM and arr.min() < 0.0:
            raise ValueError("grad-cam maps are non-negative by construction")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class AttributionPoint:
    """One salient pixel; rank 1 is the strongest |value| of its instance."""

    x: int
    y: int
    value: float
    rank: int


def make_baseline(image: GrayImage, mode: str = "zeros", blur_sigma: float = 3.0) -> GrayImage:
    if mode == "zeros":
        return GrayImage(np.zeros_like(image.data))
    if mode == "blur":
        return GrayImage(_gaussian_blur(image.data, blur_sigma))
    raise ValueError(f"unknown baseline mode {mode!r}")


def _gaussian_blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    out = arr
    for axis in (0, 1):
        padded = np.pad(out, [(radius, radius) if a == axis else (0, 0) for a in (0, 1)], mode="edge")
        acc = np.zeros_like(arr)
        for i, w in enumerate(kernel):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(i, i + arr.shape[axis])
            acc += w * padded[tuple(sl)]
        out = acc
    return np.clip(out, 0.0, 1.0)


def integrated_gradients(
    scorer: ToyScorer,
    image: GrayImage,
    baseline: GrayImage,
    det: Detection,
    n_steps: int = 30,
) -> AttributionMap:
    """Midpoint-rule path integral of the score gradient, times the input delta.

    Gradients are averaged at interpolation points (t - 0.5) / n_steps for
    t = 1..n_steps, which converges at second order without endpoint
    evaluations.
    """
    if baseline.data.shape != image.data.shape:
        raise ShapeMismatchError(
            f"baseline shape {baseline.data.shape} != image shape {image.data.shape}"
        )
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    diff = image.data - baseline.data
    grad_sum = np.zeros_like(diff)
    for t in range(1, n_steps + 1):
        alpha = (t - 0.5) / n_steps
        interpolated = GrayImage(baseline.data + alpha * diff)
        grad_sum += score(scorer, interpolated, det.bbox).input_grad
    values = diff * (grad_sum / n_steps)
    out = np.zeros_like(values)
    box = det.bbox
    out[box.y_min : box.y_max, box.x_min : box.x_max] = values[
        box.y_min : box.y_max, box.x_min : box.x_max
    ]
    return AttributionMap(det.instance_id, box, out, AttributionMethod.IG)


def bilinear_upsample(src: np.ndarray, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Upsample a feature grid back to pixel resolution.

    Output pixel (y, x) samples the source at ((y + 0.5) / stride - 0.5,
    (x + 0.5) / stride - 0.5), clamping neighbor indices at the borders;
    interpolation is computed as a + f * (b - a) along each axis.
    """
    hf, wf = src.shape
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) / stride - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) / stride - 0.5
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = sy - y0
    fx = sx - x0
    y0c = np.clip(y0.astype(np.int64), 0, hf - 1)
    y1c = np.clip(y0.astype(np.int64) + 1, 0, hf - 1)
    x0c = np.clip(x0.astype(np.int64), 0, wf - 1)
    x1c = np.clip(x0.astype(np.int64) + 1, 0, wf - 1)
    a = src[np.ix_(y0c, x0c)]
    b = src[np.ix_(y0c, x1c)]
    c = src[np.ix_(y1c, x0c)]
    d = src[np.ix_(y1c, x1c)]
    top = a + fx[None, :] * (b - a)
    bot = c + fx[None, :] * (d - c)
    return top + fy[:, None] * (bot - top)


def grad_cam(trace: ScorerTrace, det: Detection) -> AttributionMap:
    """Gradient-weighted activation map for one detection, at image resolution.

    Channel weights are the mean feature gradient over the detection's
    footprint; the weighted activation sum is rectified, bilinearly
    upsampled by the stride factor, and zeroed outside the box.
    """
    fp = trace.feature_box
    cell_count = fp.area
    k_total = trace.features.shape[0]
    alphas = [
        math.fsum(
            trace.feature_grads[k, fp.y_min : fp.y_max, fp.x_min : fp.x_max].ravel().tolist()
        )
        / cell_count
        for k in range(k_total)
    ]
    cam = np.zeros(trace.features.shape[1:], dtype=np.float64)
    for k in range(k_total):
        cam = cam + alphas[k] * trace.features[k]
    cam = np.where(cam > 0.0, cam, 0.0)
    width, height = trace.input_size
    up = bilinear_upsample(cam, trace.stride, height, width)
    out = np.zeros_like(up)
    box = det.bbox
    out[box.y_min : box.y_max, box.x_min : box.x_max] = up[
        box.y_min : box.y_max, box.x_min : box.x_max
    ]
    return AttributionMap(det.instance_id, box, out, AttributionMethod.GRADCAM)


def extract_points(
    attribution: AttributionMap, top_k: int = 20, min_separation: int = 1
) -> list[AttributionPoint]:
    """Greedy non-maximum suppression on |value| inside the instance box.

    Candidates within Chebyshev distance ``min_separation`` of an already
    selected point are suppressed; equal magnitudes break ties toward
    smaller (y, x). May return fewer than ``top_k`` points.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if min_separation < 0:
        raise ValueError("min_separation must be >= 0")
    box = attribution.box
    region = attribution.values[box.y_min : box.y_max, box.x_min : box.x_max]
    ys, xs = np.nonzero(region)
    if ys.size == 0:
        return []
    vals = region[ys, xs]
    order = np.lexsort((xs, ys, -np.abs(vals)))
    chosen: list[AttributionPoint] = []
    for idx in order:
        x = int(xs[idx]) + box.x_min
        y = int(ys[idx]) + box.y_min
        if any(max(abs(x - p.x), abs(y - p.y)) <= min_separation for p in chosen):
            continue
        chosen.append(AttributionPoint(x=x, y=y, value=float(vals[idx]), rank=len(chosen) + 1))
        if len(chosen) == top_k:
            break
    return chosen


def load_external_map(
    path: str | Path, det: Detection, expected_size: tuple[int, int] | None = None
) -> AttributionMap:
    """Ingest an externally computed attribution raster (kept signed, no ReLU)."""
    arr = read_tensor(path).astype(np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{path}: expected a [H, W] map, got shape {arr.shape}")
    if expected_size is not None and (arr.shape[1], arr.shape[0]) != expected_size:
        raise ShapeMismatchError(
            f"{path}: map is {arr.shape[1]}x{arr.shape[0]}, image is "
            f"{expected_size[0]}x{expected_size[1]}"
        )
    box = det.bbox
    out = np.zeros_like(arr)
    out[box.y_min : box.y_max, box.x_min : box.x_max] = arr[
        box.y_min : box.y_max, box.x_min : box.x_max
    ]
    return AttributionMap(det.instance_id, box, out, AttributionMethod.EXTERNAL)


def save_points(points: list[AttributionPoint], path: str | Path) -> None:
    doc = [{"x": p.x, "y": p.y, "value": p.value, "rank": p.rank} for p in points]
    atomic_write_text(path, json.dumps(doc))


def load_points(path: str | Path) -> list[AttributionPoint]:
    doc = json.loads(Path(path).read_text())
    return [
        AttributionPoint(x=int(p["x"]), y=int(p["y"]), value=float(p["value"]), rank=int(p["rank"]))
        for p in doc
    ]
