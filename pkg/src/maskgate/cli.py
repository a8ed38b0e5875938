"""Command-line pipeline: gen, attribute, refine, sweep, score.

Every subcommand validates its config up front, writes outputs atomically,
and exits nonzero on any error. Reports are sorted by (instance, rank) so
byte-identical output is independent of worker scheduling.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attribution import (
    AttributionMap,
    extract_points,
    grad_cam,
    integrated_gradients,
    load_external_map,
    make_baseline,
    save_points,
)
from .config import PipelineConfig, _build_section, load_config
from .core import BBox, Detection, GrayImage
from .errors import ConfigInvalidError, MaskGateError
from .fileio import atomic_write_text, load_image, load_mask, save_mask, save_pgm, save_png, write_tensor
from .refine import InstanceRefinement, match_gt, n_sweep, refine_attribution, refine_instances
from .scenegen import Annotation, SceneSpec, generate_scene, load_annotations, save_annotations
from .toymodel import ToyScorer, score

logger = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "image,instance_id,rank,x,y,value,mask_iou,mask_score,iou_norm,score_norm,"
    "retained,n_slices,seed,gt_source,degenerate"
)
SWEEP_COLUMNS = (
    "scene,instance_id,n,rank,status,repeats,"
    "mean_mask_iou,std_mask_iou,mean_mask_score,std_mask_score"
)


def _load_cfg(args: argparse.Namespace) -> PipelineConfig:
    return load_config(
        path=args.config,
        overrides=args.overrides,
        seed=args.seed,
        workers=args.workers,
        backend=args.backend,
        endpoint=args.endpoint,
    )


def _detections_for(annotation: Annotation) -> list[Detection]:
    if annotation.detections:
        return list(annotation.detections)
    logger.info("annotation has no detections; using GT boxes as detections")
    return [Detection(i, box, 1.0) for i, box in enumerate(annotation.gt_boxes)]


def _find_annotation(annotations_path: str, image_path: str) -> Annotation:
    target = Path(image_path).resolve()
    entries = load_annotations(annotations_path)
    for entry in entries:
        if Path(entry.image_path).resolve() == target:
            return entry
    raise ConfigInvalidError(f"{annotations_path} has no entry for image {image_path}")


def _compute_map(
    cfg: PipelineConfig, scorer: ToyScorer, image: GrayImage, det: Detection, method: str
) -> AttributionMap:
    if method == "ig":
        baseline = make_baseline(image, cfg.attribution.baseline)
        return integrated_gradients(scorer, image, baseline, det, cfg.attribution.n_steps)
    if method == "gradcam":
        return grad_cam(score(scorer, image, det.bbox), det)
    raise ConfigInvalidError(f"unknown attribution method {method!r}")


def _fmt(value: float) -> str:
    return repr(float(value))


def _overlay(image: GrayImage, result: InstanceRefinement) -> GrayImage:
    union = np.zeros((image.height, image.width), dtype=bool)
    for rec in result.records:
        if rec.retained and not rec.em.is_empty:
            union |= rec.em.to_array()
    interior = union.copy()
    interior[1:, :] &= union[:-1, :]
    interior[:-1, :] &= union[1:, :]
    interior[:, 1:] &= union[:, :-1]
    interior[:, :-1] &= union[:, 1:]
    boundary = union & ~interior
    data = image.data.copy()
    data[boundary] = 1.0
    return GrayImage(data)


def cmd_gen(args: argparse.Namespace) -> int:
    spec_doc = json.loads(Path(args.spec).read_text())
    if not isinstance(spec_doc, dict):
        raise ConfigInvalidError(f"{args.spec}: scene spec must be a JSON object")
    count = int(spec_doc.pop("count", 1))
    base = _build_section(SceneSpec, spec_doc, "scene spec")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    annotations = []
    for i in range(count):
        spec = dataclasses.replace(base, seed=base.seed + i)
        image, ann = generate_scene(spec)
        name = f"scene_{i:03d}.png"
        save_png(image, out / name)
        detections = tuple(Detection(j, box, 0.9) for j, box in enumerate(ann.gt_boxes))
        annotations.append(Annotation(image_path=name, gt_boxes=ann.gt_boxes, detections=detections))
    save_annotations(annotations, out / "annotations.json")
    print(f"wrote {count} scene(s) and annotations.json to {out}")
    return 0


def cmd_attribute(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    image = load_image(args.image)
    stem = Path(args.image).stem
    annotation = _find_annotation(args.annotations, args.image)
    detections = _detections_for(annotation)
    method = args.method or cfg.attribution.method
    scorer = cfg.scorer.build()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for det in detections:
        amap = _compute_map(cfg, scorer, image, det, method)
        points = extract_points(amap, cfg.attribution.top_k, cfg.attribution.min_separation)
        write_tensor(amap.values, out / f"{stem}_inst{det.instance_id}_{method}.sodt")
        save_points(points, out / f"{stem}_inst{det.instance_id}_points.json")
    print(f"wrote {len(detections)} attribution map(s) to {out}")
    return 0


def cmd_refine(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    image = load_image(args.image)
    stem = Path(args.image).stem
    annotation = _find_annotation(args.annotations, args.image)
    detections = _detections_for(annotation)
    method = cfg.attribution.method
    scorer = cfg.scorer.build()
    backend = cfg.build_backend()
    refine_cfg = cfg.refine_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    maps: dict[int, AttributionMap] = {}
    for det in detections:
        if args.maps:
            maps[det.instance_id] = load_external_map(
                Path(args.maps) / f"inst{det.instance_id}.sodt", det, expected_size=image.size
            )
        else:
            maps[det.instance_id] = _compute_map(cfg, scorer, image, det, method)
    points = {
        det.instance_id: extract_points(
            maps[det.instance_id], cfg.attribution.top_k, cfg.attribution.min_separation
        )
        for det in detections
    }
    results = refine_instances(
        image, detections, points, backend, refine_cfg,
        gt_boxes=annotation.gt_boxes, workers=cfg.worker_count,
    )

    rows = [REPORT_COLUMNS]
    total_records = 0
    degenerate_records = 0
    for result in results:
        det = result.detection
        refined = refine_attribution(maps[det.instance_id], result.records)
        write_tensor(refined.values, out / f"{stem}_inst{det.instance_id}_refined.sodt")
        save_pgm(_overlay(image, result), out / f"{stem}_inst{det.instance_id}_overlay.pgm")
        for rec in result.records:
            save_mask(rec.em, out / f"{stem}_inst{det.instance_id}_rank{rec.point.rank}_em.json")
            total_records += 1
            degenerate_records += rec.degenerate
            rows.append(
                ",".join(
                    [
                        Path(args.image).name,
                        str(det.instance_id),
                        str(rec.point.rank),
                        str(rec.point.x),
                        str(rec.point.y),
                        _fmt(rec.point.value),
                        _fmt(rec.mask_iou),
                        _fmt(rec.mask_score),
                        _fmt(rec.iou_norm),
                        _fmt(rec.score_norm),
                        "true" if rec.retained else "false",
                        str(refine_cfg.n_slices),
                        str(refine_cfg.master_seed),
                        result.gt_source,
                        "true" if rec.degenerate else "false",
                    ]
                )
            )
    atomic_write_text(out / "report.csv", "\n".join(rows) + "\n")
    if total_records and degenerate_records == total_records:
        print("warning: every refinement record is degenerate (all masks empty)", file=sys.stderr)
    print(f"wrote refined maps, EMs, overlays and report.csv to {out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    n_values = [int(v) for v in args.n_list.split(",") if v]
    ranks = [int(v) for v in args.ranks.split(",") if v]
    scorer = cfg.scorer.build()
    backend = cfg.build_backend()
    refine_cfg = cfg.refine_config()
    rows = [SWEEP_COLUMNS]
    for scene_idx in range(args.scenes):
        spec = dataclasses.replace(cfg.scene, seed=cfg.master_seed + scene_idx)
        image, annotation = generate_scene(spec)
        detections = [Detection(j, box, 0.9) for j, box in enumerate(annotation.gt_boxes)]
        for det in detections:
            amap = _compute_map(cfg, scorer, image, det, cfg.attribution.method)
            points = extract_points(amap, cfg.attribution.top_k, cfg.attribution.min_separation)
            sweep_rows = n_sweep(
                image, det, points, backend, refine_cfg, n_values, ranks,
                repeats=args.repeats, gt_box=match_gt(det.bbox, annotation.gt_boxes),
            )
            for row in sweep_rows:
                stats = (
                    ["", "", "", ""]
                    if row.status == "absent"
                    else [
                        _fmt(row.mean_mask_iou),
                        _fmt(row.std_mask_iou),
                        _fmt(row.mean_mask_score),
                        _fmt(row.std_mask_score),
                    ]
                )
                rows.append(
                    ",".join(
                        [str(scene_idx), str(det.instance_id), str(row.n), str(row.rank),
                         row.status, str(row.repeats)] + stats
                    )
                )
    atomic_write_text(args.out, "\n".join(rows) + "\n")
    print(f"wrote sweep report to {args.out}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    from .refine import mask_iou, mask_score

    cfg = _load_cfg(args)
    image = load_image(args.image)
    mask = load_mask(args.mask)
    coords = [int(v) for v in args.gt.split(",")]
    if len(coords) != 4:
        raise ConfigInvalidError("--gt expects x1,y1,x2,y2")
    gt = BBox(*coords)
    print(f"MaskIoU: {_fmt(mask_iou(mask, gt))}")
    print(f"MaskScore: {_fmt(mask_score(image, mask, gt, cfg.refine.epsilon))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--workers", type=int, help="override worker_count")
    common.add_argument("--backend", choices=["builtin", "mock", "remote"])
    common.add_argument("--endpoint", help="remote segmenter URL")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key, e.g. --set refine.n_slices=5",
    )

    parser = argparse.ArgumentParser(
        prog="maskgate",
        description="Refine per-detection attribution maps via prompt-driven enhanced masks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic scenes + annotations")
    p.add_argument("--spec", required=True, help="scene spec JSON (SceneSpec fields + count)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("attribute", parents=[common], help="compute attribution maps and points")
    p.add_argument("--image", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--method", choices=["ig", "gradcam"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("refine", parents=[common], help="run the full refinement pipeline")
    p.add_argument("--image", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--maps", help="directory of external SODT maps named inst<ID>.sodt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("sweep", parents=[common], help="slice-count sensitivity sweep")
    p.add_argument("--n-list", default="2,10", help="comma-separated slice counts")
    p.add_argument("--ranks", default="1,10,20", help="comma-separated point ranks")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--scenes", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score", parents=[common], help="print MaskIoU/MaskScore for a mask")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--gt", required=True, help="GT box as x1,y1,x2,y2")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MaskGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
