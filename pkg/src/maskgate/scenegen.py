"""Synthetic tiny-blob scenes with ground truth, plus annotation ingestion.

Scenes compose anisotropic Gaussian blobs (elementwise max) over a flat or
stripe-textured background, with additive Gaussian noise clipped to [0, 1].
Each blob's GT box is the tight box of its 3-sigma footprint. Generation is
a pure function of the spec, so identical seeds give bit-identical scenes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BBox, Detection, GrayImage
from .errors import (
    BoxOutOfBoundsError,
    MalformedAnnotationError,
    MissingImageError,
    PlacementFailureError,
)
from .fileio import atomic_write_text, load_image

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 10_000
STRIPE_AMPLITUDE = 0.12


@dataclass(frozen=True)
class SceneSpec:
    """Defaults are the standard desk-scale benchmark: saturated blobs
    (intensity > 1 clips into a bright plateau, like overexposed objects)
    on a stripe-textured background."""

    width: int = 64
    height: int = 64
    blob_count: int = 3
    blob_intensity: float = 2.5
    blob_sigma_range: tuple[float, float] = (1.5, 2.5)
    background: str = "circuit"  # "flat" or "circuit"
    background_level: float = 0.1
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 4 or self.height < 4:
            raise ValueError("scene must be at least 4x4")
        if self.blob_count < 0:
            raise ValueError("blob_count must be >= 0")
        if self.background not in ("flat", "circuit"):
            raise ValueError(f"unknown background {self.background!r}")
        lo, hi = self.blob_sigma_range
        if not (0.5 <= lo <= hi):
            raise ValueError("blob sigmas must be >= 0.5 and ordered")


@dataclass(frozen=True)
class Annotation:
    image_path: str
    gt_boxes: tuple[BBox, ...]
    detections: tuple[Detection, ...] = field(default=())


def _stripe_background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    count = int(rng.integers(2, 5))
    total = np.zeros((spec.height, spec.width), dtype=np.float64)
    for _ in range(count):
        theta = rng.uniform(0.0, math.pi)
        freq = rng.uniform(0.03, 0.12)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        total += np.sin(2.0 * math.pi * freq * (xs * math.cos(theta) + ys * math.sin(theta)) + phase)
    return spec.background_level + STRIPE_AMPLITUDE * total / count


def _blob_footprint_box(
    cx: float, cy: float, sig_u: float, sig_v: float, theta: float
) -> BBox:
    # tight box of the rotated 3-sigma ellipse
    ex = 3.0 * math.sqrt((sig_u * math.cos(theta)) ** 2 + (sig_v * math.sin(theta)) ** 2)
    ey = 3.0 * math.sqrt((sig_u * math.sin(theta)) ** 2 + (sig_v * math.cos(theta)) ** 2)
    return BBox(
        int(math.ceil(cx - ex)),
        int(math.ceil(cy - ey)),
        int(math.floor(cx + ex)) + 1,
        int(math.floor(cy + ey)) + 1,
    )


def generate_scene(spec: SceneSpec) -> tuple[GrayImage, Annotation]:
    """Render one scene and its tight GT boxes; deterministic given the seed."""
    rng = np.random.default_rng(spec.seed)
    if spec.background == "circuit":
        canvas = _stripe_background(spec, rng)
    else:
        canvas = np.full((spec.height, spec.width), spec.background_level, dtype=np.float64)

    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    boxes: list[BBox] = []
    attempts = 0
    lo, hi = spec.blob_sigma_range
    while len(boxes) < spec.blob_count:
        if attempts >= MAX_PLACEMENT_ATTEMPTS:
            raise PlacementFailureError(
                f"could not place {spec.blob_count} disjoint blobs in "
                f"{spec.width}x{spec.height} after {attempts} attempts"
            )
        attempts += 1
        # centers snap to the pixel lattice so a blob's peak lands on a pixel
        cx = float(round(rng.uniform(0.0, spec.width - 1)))
        cy = float(round(rng.uniform(0.0, spec.height - 1)))
        sig_u = rng.uniform(lo, hi)
        sig_v = rng.uniform(lo, hi)
        theta = rng.uniform(0.0, math.pi)
        try:
            box = _blob_footprint_box(cx, cy, sig_u, sig_v, theta)
        except ValueError:
            continue
        if box.x_min < 0 or box.y_min < 0 or box.x_max > spec.width or box.y_max > spec.height:
            continue
        if any(box.intersection_area(other) > 0 for other in boxes):
            continue
        u = (xs - cx) * math.cos(theta) + (ys - cy) * math.sin(theta)
        v = -(xs - cx) * math.sin(theta) + (ys - cy) * math.cos(theta)
        blob = spec.blob_intensity * np.exp(-0.5 * ((u / sig_u) ** 2 + (v / sig_v) ** 2))
        canvas = np.maximum(canvas, blob)
        boxes.append(box)

    if spec.noise_sigma > 0.0:
        canvas = canvas + rng.normal(0.0, spec.noise_sigma, size=canvas.shape)
    image = GrayImage(np.clip(canvas, 0.0, 1.0))
    return image, Annotation(image_path="", gt_boxes=tuple(boxes))


def save_annotations(annotations: list[Annotation], path: str | Path) -> None:
    doc = []
    for ann in annotations:
        entry: dict = {
            "image": ann.image_path,
            "gt": [box.to_list() for box in ann.gt_boxes],
        }
        if ann.detections:
            entry["detections"] = [
                {"id": det.instance_id, "bbox": det.bbox.to_list(), "score": det.confidence}
                for det in ann.detections
            ]
        doc.append(entry)
    atomic_write_text(path, json.dumps(doc, indent=2))


def _parse_box(raw: object, context: str) -> BBox:
    if not (isinstance(raw, list) and len(raw) == 4 and all(isinstance(v, (int, float)) for v in raw)):
        raise MalformedAnnotationError(f"{context}: box must be [x1, y1, x2, y2], got {raw!r}")
    x1, y1, x2, y2 = (int(v) for v in raw)
    if x1 >= x2 or y1 >= y2:
        raise MalformedAnnotationError(f"{context}: box {raw!r} has non-positive area")
    return BBox(x1, y1, x2, y2)


def load_annotations(path: str | Path) -> list[Annotation]:
    """Load and validate annotations; out-of-bounds boxes are clipped with a warning."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedAnnotationError(f"{path}: {exc}") from exc
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list):
        raise MalformedAnnotationError(f"{path}: expected a JSON object or array")
    annotations = []
    for idx, entry in enumerate(doc):
        context = f"{path}[{idx}]"
        if not isinstance(entry, dict) or "image" not in entry:
            raise MalformedAnnotationError(f"{context}: missing 'image'")
        image_path = Path(entry["image"])
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        if not image_path.exists():
            raise MissingImageError(f"{context}: image {image_path} not found")
        width, height = load_image(image_path).size

        def clipped(box: BBox, what: str) -> BBox:
            if box.x_min >= 0 and box.y_min >= 0 and box.x_max <= width and box.y_max <= height:
                return box
            try:
                fixed = box.clip(width, height)
            except BoxOutOfBoundsError as exc:
                raise MalformedAnnotationError(f"{context}: {what} {box!r} fully outside image") from exc
            logger.warning("%s: clipped %s %s to image bounds", context, what, box.to_list())
            return fixed

        gt_boxes = tuple(
            clipped(_parse_box(raw, context), "gt box") for raw in entry.get("gt", [])
        )
        detections = []
        seen_ids: set[int] = set()
        for det_raw in entry.get("detections", []):
            if not isinstance(det_raw, dict) or not {"id", "bbox", "score"} <= det_raw.keys():
                raise MalformedAnnotationError(f"{context}: detection needs id/bbox/score")
            instance_id = int(det_raw["id"])
            if instance_id in seen_ids:
                raise MalformedAnnotationError(f"{context}: duplicate detection id {instance_id}")
            seen_ids.add(instance_id)
            detections.append(
                Detection(
                    instance_id=instance_id,
                    bbox=clipped(_parse_box(det_raw["bbox"], context), "detection box"),
                    confidence=float(det_raw["score"]),
                )
            )
        annotations.append(
            Annotation(
                image_path=str(image_path),
                gt_boxes=gt_boxes,
                detections=tuple(detections),
            )
        )
    return annotations
