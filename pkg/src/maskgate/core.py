"""Geometry and raster primitives shared by every stage of the pipeline.

All types are immutable after construction (backing arrays are marked
read-only), so instances can be shared freely between concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoxOutOfBoundsError, EmptyMaskError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box with half-open bounds [x_min, x_max) x [y_min, y_max)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self!r}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def contains_point(self, x: int, y: int) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def contains_box(self, other: "BBox") -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and other.x_max <= self.x_max
            and other.y_max <= self.y_max
        )

    def intersection_area(self, other: "BBox") -> int:
        iw = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        ih = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        if iw <= 0 or ih <= 0:
            return 0
        return iw * ih

    def translate(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def clip(self, width: int, height: int) -> "BBox":
        """Clip to an image of the given size; raises if nothing remains."""
        x0 = max(self.x_min, 0)
        y0 = max(self.y_min, 0)
        x1 = min(self.x_max, width)
        y1 = min(self.y_max, height)
        if x0 >= x1 or y0 >= y1:
            raise BoxOutOfBoundsError(f"box {self!r} lies outside {width}x{height} image")
        return BBox(x0, y0, x1, y1)

    def scale_about_center(self, factor: float, bounds: tuple[int, int] | None = None) -> "BBox":
        """Grow (or shrink) each side about the center; optionally clip to (width, height)."""
        cx, cy = self.center
        hx = self.width * factor / 2.0
        hy = self.height * factor / 2.0
        # floor/ceil keeps the scaled box a superset of the original for factor >= 1
        box = BBox(
            int(np.floor(cx - hx)),
            int(np.floor(cy - hy)),
            int(np.ceil(cx + hx)),
            int(np.ceil(cy + hy)),
        )
        if bounds is not None:
            box = box.clip(bounds[0], bounds[1])
        return box

    def to_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class GrayImage:
    """2-D grayscale raster with intensities in [0, 1], stored row-major."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected 2-D intensity raster, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite intensities")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        """(width, height) pair."""
        return (self.width, self.height)

    def crop(self, box: BBox) -> "GrayImage":
        if not (0 <= box.x_min and 0 <= box.y_min and box.x_max <= self.width and box.y_max <= self.height):
            raise BoxOutOfBoundsError(f"crop {box!r} outside {self.width}x{self.height} image")
        return GrayImage(self.data[box.y_min : box.y_max, box.x_min : box.x_max])


@dataclass(frozen=True)
class Detection:
    """One detected instance: a predicted box with its confidence."""

    instance_id: int
    bbox: BBox
    confidence: float
    class_id: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class BinaryMask:
    """Per-instance foreground raster, run-length encoded over row-major order.

    Runs are (start, length) pairs over the flattened raster; they are kept
    sorted, non-overlapping and in-bounds, so decode(encode(m)) is bit-exact.
    """

    width: int
    height: int
    runs: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("mask dimensions must be positive")
        total = self.width * self.height
        runs = tuple((int(s), int(n)) for s, n in self.runs)
        prev_end = 0
        for start, length in runs:
            if length < 1 or start < prev_end or start + length > total:
                raise ValueError(f"invalid RLE run ({start}, {length})")
            prev_end = start + length
        object.__setattr__(self, "runs", runs)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BinaryMask":
        arr = np.asarray(arr, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"expected 2-D mask, got shape {arr.shape}")
        flat = arr.ravel()
        # transitions of the padded 0/1 signal give run starts and ends
        edges = np.flatnonzero(np.diff(np.concatenate(([0], flat.view(np.uint8), [0]))))
        starts = edges[0::2]
        ends = edges[1::2]
        runs = tuple((int(s), int(e - s)) for s, e in zip(starts, ends))
        return cls(width=arr.shape[1], height=arr.shape[0], runs=runs)

    def to_array(self) -> np.ndarray:
        flat = np.zeros(self.width * self.height, dtype=bool)
        for start, length in self.runs:
            flat[start : start + length] = True
        return flat.reshape(self.height, self.width)

    @property
    def pixel_count(self) -> int:
        return sum(n for _, n in self.runs)

    @property
    def is_empty(self) -> bool:
        return not self.runs


def mask_bbox(mask: BinaryMask) -> BBox:
    """Tightest half-open box containing every foreground pixel."""
    if mask.is_empty:
        raise EmptyMaskError("mask has no foreground pixels")
    ys, xs = np.nonzero(mask.to_array())
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    inter = a.intersection_area(b)
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)
