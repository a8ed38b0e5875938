"""A fixed, hand-differentiated confidence scorer for one detection box.

Forward pass: K strided 2-D convolutions -> ReLU -> per-map mean over the
box footprint at feature resolution -> weighted sum -> sigmoid. The trace
carries exact analytic gradients with respect to the input pixels and the
post-activation feature maps, so attribution code downstream never needs
autodiff. Kernels are fixed; there is no training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BBox, GrayImage
from .errors import BoxOutOfBoundsError, BoxSmallerThanStrideError

KERNELS: dict[str, np.ndarray] = {
    "identity": np.array([[0, 0, 0], [0, 1, 0], [0, 0, 0]], dtype=np.float64),
    "gaussian3": np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0,
    "laplacian": np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64),
    "box3": np.ones((3, 3), dtype=np.float64) / 9.0,
}

DEFAULT_KERNELS = ("identity", "gaussian3", "laplacian", "box3")
DEFAULT_WEIGHTS = (1.0, 0.5, -0.5, 0.25)


def resolve_kernel(spec: str | np.ndarray) -> np.ndarray:
    if isinstance(spec, str):
        try:
            return KERNELS[spec]
        except KeyError:
            raise ValueError(f"unknown kernel {spec!r}; known: {sorted(KERNELS)}") from None
    arr = np.asarray(spec, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] % 2 == 0 or arr.shape[1] % 2 == 0:
        raise ValueError("kernels must be 2-D with odd dimensions")
    return arr


@dataclass(frozen=True)
class ToyScorer:
    """Immutable scorer configuration; safe to share between workers.

    ``use_relu``/``use_sigmoid`` exist for test builds that need a purely
    linear score; production configs leave both enabled.
    """

    kernels: tuple[np.ndarray, ...]
    mixing_weights: tuple[float, ...]
    stride: int = 2
    use_relu: bool = True
    use_sigmoid: bool = True

    def __post_init__(self) -> None:
        kernels = tuple(resolve_kernel(k) for k in self.kernels)
        if not kernels:
            raise ValueError("need at least one kernel")
        if len(kernels) != len(self.mixing_weights):
            raise ValueError("one mixing weight per kernel required")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not all(math.isfinite(w) for w in self.mixing_weights):
            raise ValueError("mixing weights must be finite")
        for k in kernels:
            k.setflags(write=False)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "mixing_weights", tuple(float(w) for w in self.mixing_weights))

    @classmethod
    def default(cls, stride: int = 2) -> "ToyScorer":
        return cls(kernels=DEFAULT_KERNELS, mixing_weights=DEFAULT_WEIGHTS, stride=stride)

    @property
    def num_kernels(self) -> int:
        return len(self.kernels)

    def feature_shape(self, height: int, width: int) -> tuple[int, int]:
        return (-(-height // self.stride), -(-width // self.stride))

    def feature_footprint(self, box: BBox) -> BBox:
        """Feature-resolution cells whose stride block intersects the box."""
        s = self.stride
        return BBox(box.x_min // s, box.y_min // s, -(-box.x_max // s), -(-box.y_max // s))

    def receptive_field(self, box: BBox, image_size: tuple[int, int]) -> BBox:
        """Pixel box influencing the score of ``box``, clipped to the image.

        Only taps with nonzero kernel weight count, so an identity kernel
        has a one-pixel reach per feature cell.
        """
        fp = self.feature_footprint(box)
        s = self.stride
        x_lo = y_lo = np.inf
        x_hi = y_hi = -np.inf
        for kernel in self.kernels:
            pad_y, pad_x = kernel.shape[0] // 2, kernel.shape[1] // 2
            taps_y, taps_x = np.nonzero(kernel)
            if taps_y.size == 0:
                continue
            y_lo = min(y_lo, fp.y_min * s + taps_y.min() - pad_y)
            y_hi = max(y_hi, (fp.y_max - 1) * s + taps_y.max() - pad_y)
            x_lo = min(x_lo, fp.x_min * s + taps_x.min() - pad_x)
            x_hi = max(x_hi, (fp.x_max - 1) * s + taps_x.max() - pad_x)
        box_rf = BBox(int(x_lo), int(y_lo), int(x_hi) + 1, int(y_hi) + 1)
        return box_rf.clip(image_size[0], image_size[1])


@dataclass(frozen=True)
class ScorerTrace:
    """Forward activations plus exact analytic gradients for one (image, box) pair."""

    features: np.ndarray       # [K, Hf, Wf] post-activation maps
    score: float
    input_grad: np.ndarray     # [H, W] dScore/dPixel
    feature_grads: np.ndarray  # [K, Hf, Wf] dScore/dFeature
    stride: int
    box: BBox
    feature_box: BBox
    input_size: tuple[int, int]  # (width, height)
    pre_features: np.ndarray | None = None  # [K, Hf, Wf] pre-activation conv outputs


def _conv_all(scorer: ToyScorer, data: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Strided zero-padded convolutions; also returns padded views for backprop."""
    h, w = data.shape
    hf, wf = scorer.feature_shape(h, w)
    s = scorer.stride
    outs = np.zeros((scorer.num_kernels, hf, wf), dtype=np.float64)
    padded_shapes = []
    for k, kernel in enumerate(scorer.kernels):
        kh, kw = kernel.shape
        pad_y, pad_x = kh // 2, kw // 2
        need_h = (hf - 1) * s + kh
        need_w = (wf - 1) * s + kw
        padded = np.zeros((max(need_h, h + pad_y), max(need_w, w + pad_x)), dtype=np.float64)
        padded[pad_y : pad_y + h, pad_x : pad_x + w] = data
        for dy in range(kh):
            for dx in range(kw):
                weight = kernel[dy, dx]
                if weight == 0.0:
                    continue
                outs[k] += weight * padded[dy : dy + (hf - 1) * s + 1 : s, dx : dx + (wf - 1) * s + 1 : s]
        padded_shapes.append(padded.shape)
    return outs, padded_shapes


def score(scorer: ToyScorer, image: GrayImage, box: BBox) -> ScorerTrace:
    """Score one detection box and return exact gradients from hand-coded backprop."""
    h, w = image.height, image.width
    if not (0 <= box.x_min and 0 <= box.y_min and box.x_max <= w and box.y_max <= h):
        raise BoxOutOfBoundsError(f"box {box!r} outside {w}x{h} image")
    fp = scorer.feature_footprint(box)
    hf, wf = scorer.feature_shape(h, w)
    if fp.x_min >= min(fp.x_max, wf) or fp.y_min >= min(fp.y_max, hf):
        raise BoxSmallerThanStrideError(f"box {box!r} has empty footprint at stride {scorer.stride}")

    pre, padded_shapes = _conv_all(scorer, image.data)
    features = np.where(pre > 0.0, pre, 0.0) if scorer.use_relu else pre

    zone = features[:, fp.y_min : fp.y_max, fp.x_min : fp.x_max]
    cell_count = fp.area
    weights = np.asarray(scorer.mixing_weights)
    pooled = zone.reshape(scorer.num_kernels, -1).sum(axis=1) / cell_count
    z = float(np.dot(weights, pooled))

    if scorer.use_sigmoid:
        value = 1.0 / (1.0 + math.exp(-z))
        dscore_dz = value * (1.0 - value)
    else:
        value = z
        dscore_dz = 1.0

    # dScore/dFeature: constant over the footprint per map, zero elsewhere
    feature_grads = np.zeros_like(features)
    for k in range(scorer.num_kernels):
        feature_grads[k, fp.y_min : fp.y_max, fp.x_min : fp.x_max] = (
            dscore_dz * weights[k] / cell_count
        )

    # back through ReLU and the transposed strided convolution
    g_pre = feature_grads * (pre > 0.0) if scorer.use_relu else feature_grads.copy()
    s = scorer.stride
    input_grad = np.zeros((h, w), dtype=np.float64)
    for k, kernel in enumerate(scorer.kernels):
        kh, kw = kernel.shape
        pad_y, pad_x = kh // 2, kw // 2
        acc = np.zeros(padded_shapes[k], dtype=np.float64)
        for dy in range(kh):
            for dx in range(kw):
                weight = kernel[dy, dx]
                if weight == 0.0:
                    continue
                acc[dy : dy + (hf - 1) * s + 1 : s, dx : dx + (wf - 1) * s + 1 : s] += weight * g_pre[k]
        input_grad += acc[pad_y : pad_y + h, pad_x : pad_x + w]

    features.setflags(write=False)
    input_grad.setflags(write=False)
    feature_grads.setflags(write=False)
    pre.setflags(write=False)
    return ScorerTrace(
        features=features,
        score=value,
        input_grad=input_grad,
        feature_grads=feature_grads,
        stride=s,
        box=box,
        feature_box=fp,
        input_size=(w, h),
        pre_features=pre,
    )
