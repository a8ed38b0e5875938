"""Attribution refinement: random context slices, enhanced masks, and the
dual-constraint quality gate.

Each salient attribution point prompts the segmenter once per randomized
context window; the per-window masks are intersected into an Enhanced Mask
(EM). EMs are scored by geometric alignment (mask_iou) and a Fisher-style
contrast ratio (mask_score), min-max normalized within each instance, and
gated by strict thresholds on both normalized metrics. Retained EMs define
the support of the refined attribution map.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .attribution import AttributionMap, AttributionPoint
from .core import BBox, BinaryMask, Detection, GrayImage, box_iou, mask_bbox
from .errors import (
    BoxOutOfBoundsError,
    EmptyBackgroundError,
    EmptyMaskError,
    WindowMaskMismatchError,
)
from .segment import SegmenterBackend, SegmentRequest, segment

FALLBACK_ANNULUS_DILATION = 1.25
DEFAULT_JITTER_FRAC = 0.25


@dataclass(frozen=True)
class SliceWindow:
    """One randomized context window, in full-image coordinates."""

    window: BBox
    seed_index: int


@dataclass(frozen=True)
class RefineConfig:
    n_slices: int = 10
    area_ratio: float = 20.0
    score_threshold: float = 0.4
    iou_threshold: float = 0.3
    lambda_mode: str = "reciprocal-gt-area"
    epsilon: float = 1e-8
    master_seed: int = 0
    jitter_frac: float = DEFAULT_JITTER_FRAC

    def __post_init__(self) -> None:
        if self.n_slices < 1:
            raise ValueError("n_slices must be >= 1")
        if self.area_ratio < 1.0:
            raise ValueError("area_ratio must be >= 1")
        for name in ("score_threshold", "iou_threshold"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.lambda_mode != "reciprocal-gt-area":
            raise ValueError("only the reciprocal-gt-area overflow penalty is supported")


@dataclass(frozen=True)
class RefinementRecord:
    """Outcome of the EM pipeline for one attribution point."""

    point: AttributionPoint
    em: BinaryMask
    mask_iou: float
    mask_score: float
    iou_norm: float
    score_norm: float
    retained: bool
    degenerate: bool = False


def random_slices(
    image_size: tuple[int, int],
    box: BBox,
    n: int,
    area_ratio: float,
    seed_key: Sequence[int],
    jitter_frac: float = DEFAULT_JITTER_FRAC,
) -> list[SliceWindow]:
    """Randomized context windows around ``box`` at a fixed area ratio.

    Window sides are the box sides scaled by sqrt(area_ratio) (aspect
    preserving), centers get uniform jitter of +-jitter_frac of the window
    size, and each window is shifted minimally so it still contains the box
    and stays inside the image (or is clipped to the image where the image
    itself is smaller). Window i draws from an RNG substream keyed by
    (*seed_key, i), so a window depends only on its index, never on n.
    """
    if n < 1:
        raise ValueError("need at least one slice")
    if area_ratio < 1.0:
        raise ValueError("area_ratio must be >= 1")
    width, height = image_size
    if not BBox(0, 0, width, height).contains_box(box):
        raise BoxOutOfBoundsError(f"box {box!r} not inside {width}x{height} image")
    scale = math.sqrt(area_ratio)
    win_w = min(width, int(math.ceil(box.width * scale)))
    win_h = min(height, int(math.ceil(box.height * scale)))
    cx, cy = box.center
    windows = []
    for i in range(n):
        rng = np.random.default_rng([*seed_key, i])
        jx = float(rng.uniform(-jitter_frac * win_w, jitter_frac * win_w))
        jy = float(rng.uniform(-jitter_frac * win_h, jitter_frac * win_h))
        x0 = round(cx + jx - win_w / 2)
        y0 = round(cy + jy - win_h / 2)
        # repair containment first, then clamp into the image; the clamp is
        # containment-safe because win_w <= width and the box is in bounds
        x0 = max(min(x0, box.x_min), box.x_max - win_w)
        y0 = max(min(y0, box.y_min), box.y_max - win_h)
        x0 = max(0, min(x0, width - win_w))
        y0 = max(0, min(y0, height - win_h))
        windows.append(SliceWindow(BBox(x0, y0, x0 + win_w, y0 + win_h), seed_index=i))
    return windows


def enhanced_mask(
    per_slice_masks: Sequence[tuple[SliceWindow, BinaryMask]],
    image_size: tuple[int, int],
) -> BinaryMask:
    """Intersection of per-window masks, in full-image coordinates.

    Pixels outside a given window count as background for that slice, so
    the result is contained in every window. An empty result is valid.
    """
    if not per_slice_masks:
        raise ValueError("need at least one slice mask")
    width, height = image_size
    acc: np.ndarray | None = None
    for slice_window, mask in per_slice_masks:
        win = slice_window.window
        if (mask.width, mask.height) != (win.width, win.height):
            raise WindowMaskMismatchError(
                f"mask {mask.width}x{mask.height} does not fit window "
                f"{win.width}x{win.height} (slice {slice_window.seed_index})"
            )
        full = np.zeros((height, width), dtype=bool)
        full[win.y_min : win.y_max, win.x_min : win.x_max] = mask.to_array()
        acc = full if acc is None else (acc & full)
    return BinaryMask.from_array(acc)


def mask_iou(em: BinaryMask, gt: BBox) -> float:
    """IoU between the EM's tight bounding box and the GT box; 0 for empty EMs."""
    if em.is_empty:
        return 0.0
    return box_iou(mask_bbox(em), gt)


def mask_score(image: GrayImage, em: BinaryMask, gt: BBox, epsilon: float = 1e-8) -> float:
    """Fisher-style contrast between the mask core and the in-box background.

    score = (mu_core - mu_bg)^2 / (var_core + var_bg + overflow_penalty),
    with population variances, an overflow penalty of Area(EM outside GT)
    divided by Area(GT), and ``epsilon`` added to the denominator. When the
    EM covers the whole GT box, the background falls back to the annulus
    between GT and GT dilated 1.25x (clipped to the image, minus the EM).
    """
    if em.is_empty:
        raise EmptyMaskError("mask_score needs a non-empty enhanced mask")
    gt = gt.clip(image.width, image.height)
    fg = em.to_array()
    if fg.shape != image.data.shape:
        raise WindowMaskMismatchError(
            f"EM is {em.width}x{em.height}, image is {image.width}x{image.height}"
        )
    in_gt = np.zeros_like(fg)
    in_gt[gt.y_min : gt.y_max, gt.x_min : gt.x_max] = True
    bg_sel = in_gt & ~fg
    if not bg_sel.any():
        annulus = gt.scale_about_center(FALLBACK_ANNULUS_DILATION, bounds=image.size)
        ring = np.zeros_like(fg)
        ring[annulus.y_min : annulus.y_max, annulus.x_min : annulus.x_max] = True
        ring &= ~in_gt
        bg_sel = ring & ~fg
        if not bg_sel.any():
            raise EmptyBackgroundError("no background pixels, even in the fallback annulus")
    core_vals = image.data[fg]
    bg_vals = image.data[bg_sel]
    overflow = int(np.count_nonzero(fg & ~in_gt))
    penalty = overflow / gt.area
    mu_core = float(core_vals.mean())
    mu_bg = float(bg_vals.mean())
    var_core = float(core_vals.var())
    var_bg = float(bg_vals.var())
    return (mu_core - mu_bg) ** 2 / (var_core + var_bg + penalty + epsilon)


def instance_normalize(values: Sequence[float]) -> list[float]:
    """Min-max normalize within one instance; a flat list maps to all 1.0."""
    if not values:
        raise ValueError("cannot normalize an empty list")
    arr = [float(v) for v in values]
    if not all(math.isfinite(v) for v in arr):
        raise ValueError("values must be finite")
    lo, hi = min(arr), max(arr)
    if hi == lo:
        return [1.0] * len(arr)
    span = hi - lo
    return [(v - lo) / span for v in arr]


def dual_filter(records: Sequence[RefinementRecord], cfg: RefineConfig) -> list[RefinementRecord]:
    """Set retained flags: strictly above both normalized thresholds."""
    return [
        replace(
            rec,
            retained=(
                not rec.degenerate
                and rec.score_norm > cfg.score_threshold
                and rec.iou_norm > cfg.iou_threshold
            ),
        )
        for rec in records
    ]


def refine_attribution(
    attribution: AttributionMap, records: Sequence[RefinementRecord]
) -> AttributionMap:
    """Keep original values only inside the union of retained EMs."""
    keep = np.zeros_like(attribution.values, dtype=bool)
    for rec in records:
        if rec.retained and not rec.em.is_empty:
            keep |= rec.em.to_array()
    return AttributionMap(
        instance_id=attribution.instance_id,
        box=attribution.box,
        values=np.where(keep, attribution.values, 0.0),
        method=attribution.method,
    )


def slice_masks(
    image: GrayImage,
    det: Detection,
    point: AttributionPoint,
    windows: Sequence[SliceWindow],
    backend: SegmenterBackend,
) -> list[tuple[SliceWindow, BinaryMask]]:
    """Prompt the segmenter once per window, in window-local coordinates."""
    pairs = []
    for slice_window in windows:
        win = slice_window.window
        crop = image.crop(win)
        req = SegmentRequest(
            crop=crop,
            point=(point.x - win.x_min, point.y - win.y_min),
            box_prior=det.bbox.translate(-win.x_min, -win.y_min),
        )
        pairs.append((slice_window, segment(backend, req)))
    return pairs


def evaluate_records(
    image: GrayImage,
    gt: BBox,
    points: Sequence[AttributionPoint],
    ems: Sequence[BinaryMask],
    cfg: RefineConfig,
) -> list[RefinementRecord]:
    """Metrics -> per-instance normalization -> dual gate, for one instance.

    Degenerate (empty-EM) records are excluded from normalization and never
    retained; normalization sees only this instance's records, so instances
    cannot influence each other.
    """
    raw: list[RefinementRecord] = []
    for point, em in zip(points, ems):
        if em.is_empty:
            raw.append(
                RefinementRecord(
                    point=point, em=em, mask_iou=0.0, mask_score=0.0,
                    iou_norm=0.0, score_norm=0.0, retained=False, degenerate=True,
                )
            )
        else:
            raw.append(
                RefinementRecord(
                    point=point, em=em,
                    mask_iou=mask_iou(em, gt),
                    mask_score=mask_score(image, em, gt, cfg.epsilon),
                    iou_norm=0.0, score_norm=0.0, retained=False,
                )
            )
    live = [rec for rec in raw if not rec.degenerate]
    if live:
        iou_norms = instance_normalize([rec.mask_iou for rec in live])
        score_norms = instance_normalize([rec.mask_score for rec in live])
        merged = []
        idx = 0
        for rec in raw:
            if rec.degenerate:
                merged.append(rec)
            else:
                merged.append(replace(rec, iou_norm=iou_norms[idx], score_norm=score_norms[idx]))
                idx += 1
        raw = merged
    return dual_filter(raw, cfg)


@dataclass(frozen=True)
class InstanceRefinement:
    detection: Detection
    gt_box: BBox
    gt_source: str  # "annotation" or "prediction"
    records: tuple[RefinementRecord, ...]


def match_gt(det_box: BBox, gt_boxes: Sequence[BBox]) -> BBox | None:
    """GT box with the highest positive IoU against the detection, if any."""
    best, best_iou = None, 0.0
    for gt in gt_boxes:
        iou = box_iou(det_box, gt)
        if iou > best_iou:
            best, best_iou = gt, iou
    return best


def refine_instance(
    image: GrayImage,
    det: Detection,
    points: Sequence[AttributionPoint],
    backend: SegmenterBackend,
    cfg: RefineConfig,
    gt_box: BBox | None = None,
) -> InstanceRefinement:
    """Run the slicing + EM + gating pipeline for one detected instance.

    Without an annotated GT box the predicted box stands in for it and the
    result is flagged via ``gt_source="prediction"``.
    """
    metric_gt = gt_box if gt_box is not None else det.bbox
    windows = random_slices(
        image.size,
        det.bbox,
        cfg.n_slices,
        cfg.area_ratio,
        seed_key=(cfg.master_seed, det.instance_id),
        jitter_frac=cfg.jitter_frac,
    )
    ems = [
        enhanced_mask(slice_masks(image, det, point, windows, backend), image.size)
        for point in points
    ]
    records = evaluate_records(image, metric_gt, points, ems, cfg)
    return InstanceRefinement(
        detection=det,
        gt_box=metric_gt,
        gt_source="annotation" if gt_box is not None else "prediction",
        records=tuple(records),
    )


def refine_instances(
    image: GrayImage,
    detections: Sequence[Detection],
    points_by_instance: dict[int, Sequence[AttributionPoint]],
    backend: SegmenterBackend,
    cfg: RefineConfig,
    gt_boxes: Sequence[BBox] = (),
    workers: int = 1,
) -> list[InstanceRefinement]:
    """Fan instances out to a worker pool; output order is scheduling-independent."""

    def run(det: Detection) -> InstanceRefinement:
        return refine_instance(
            image, det, points_by_instance.get(det.instance_id, ()), backend, cfg,
            gt_box=match_gt(det.bbox, gt_boxes),
        )

    if workers <= 1:
        results = [run(det) for det in detections]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, detections))
    return sorted(results, key=lambda res: res.detection.instance_id)


@dataclass(frozen=True)
class SweepRow:
    n: int
    rank: int
    status: str  # "present" or "absent"
    repeats: int
    mean_mask_iou: float
    std_mask_iou: float
    mean_mask_score: float
    std_mask_score: float


def n_sweep(
    image: GrayImage,
    det: Detection,
    points: Sequence[AttributionPoint],
    backend: SegmenterBackend,
    cfg: RefineConfig,
    n_values: Sequence[int],
    ranks: Sequence[int] = (1, 10, 20),
    repeats: int = 1,
    gt_box: BBox | None = None,
) -> list[SweepRow]:
    """Slice-count sensitivity sweep for one instance.

    For every n and rank, the full slicing + EM + metric pipeline runs
    ``repeats`` times with distinct seeds; rows report mean and standard
    deviation of the metrics. Per-repeat windows are generated once at
    max(n_values) and prefix-intersected, so EMs are nested across n by
    construction. Ranks beyond the available points yield "absent" rows;
    empty EMs contribute zero for both metrics.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    metric_gt = gt_box if gt_box is not None else det.bbox
    by_rank = {p.rank: p for p in points}
    max_n = max(n_values)
    samples: dict[tuple[int, int], list[tuple[float, float]]] = {
        (n, rank): [] for n in n_values for rank in ranks
    }
    for repeat in range(repeats):
        windows = random_slices(
            image.size,
            det.bbox,
            max_n,
            cfg.area_ratio,
            seed_key=(cfg.master_seed, repeat, det.instance_id),
            jitter_frac=cfg.jitter_frac,
        )
        for rank in ranks:
            point = by_rank.get(rank)
            if point is None:
                continue
            pairs = slice_masks(image, det, point, windows, backend)
            for n in n_values:
                em = enhanced_mask(pairs[:n], image.size)
                if em.is_empty:
                    samples[(n, rank)].append((0.0, 0.0))
                else:
                    samples[(n, rank)].append(
                        (mask_iou(em, metric_gt), mask_score(image, em, metric_gt, cfg.epsilon))
                    )
    rows = []
    for n in n_values:
        for rank in ranks:
            if by_rank.get(rank) is None:
                rows.append(SweepRow(n, rank, "absent", 0, math.nan, math.nan, math.nan, math.nan))
                continue
            ious = np.array([s[0] for s in samples[(n, rank)]])
            scores = np.array([s[1] for s in samples[(n, rank)]])
            rows.append(
                SweepRow(
                    n=n, rank=rank, status="present", repeats=repeats,
                    mean_mask_iou=float(ious.mean()), std_mask_iou=float(ious.std()),
                    mean_mask_score=float(scores.mean()), std_mask_score=float(scores.std()),
                )
            )
    return rows
