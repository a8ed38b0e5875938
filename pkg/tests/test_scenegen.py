import json
import logging

import numpy as np
import pytest

from maskgate.core import BBox, Detection, box_iou
from maskgate.errors import MalformedAnnotationError, MissingImageError, PlacementFailureError
from maskgate.fileio import save_png
from maskgate.scenegen import (
    Annotation,
    SceneSpec,
    generate_scene,
    load_annotations,
    save_annotations,
)


class TestGenerateScene:
    def test_zero_blobs_is_pure_background(self):
        spec = SceneSpec(blob_count=0, background="flat", background_level=0.25, noise_sigma=0.0)
        image, ann = generate_scene(spec)
        assert np.all(image.data == 0.25)
        assert ann.gt_boxes == ()

    def test_single_blob_peak_at_center(self):
        spec = SceneSpec(
            blob_count=1, blob_intensity=0.9, background="flat", background_level=0.1,
            noise_sigma=0.0, seed=3,
        )
        image, ann = generate_scene(spec)
        assert image.data.max() == pytest.approx(0.9, abs=1e-6)
        gt = ann.gt_boxes[0]
        y, x = np.unravel_index(np.argmax(image.data), image.data.shape)
        assert gt.contains_point(int(x), int(y))

    def test_same_seed_bit_identical(self):
        spec = SceneSpec(seed=11)
        image_a, ann_a = generate_scene(spec)
        image_b, ann_b = generate_scene(spec)
        assert np.array_equal(image_a.data, image_b.data)
        assert ann_a.gt_boxes == ann_b.gt_boxes

    def test_blobs_pairwise_disjoint(self):
        for seed in range(5):
            _, ann = generate_scene(SceneSpec(blob_count=4, seed=seed, width=96, height=96))
            boxes = ann.gt_boxes
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    assert box_iou(boxes[i], boxes[j]) == 0.0

    def test_every_gt_box_contains_its_blob_argmax(self):
        spec = SceneSpec(blob_count=3, noise_sigma=0.0, background="flat", seed=7, width=96, height=96)
        image, ann = generate_scene(spec)
        for gt in ann.gt_boxes:
            region = image.data[gt.y_min : gt.y_max, gt.x_min : gt.x_max]
            assert region.max() == pytest.approx(min(spec.blob_intensity, 1.0), abs=1e-6)

    def test_placement_failure(self):
        spec = SceneSpec(width=24, height=24, blob_count=30, blob_sigma_range=(2.0, 2.5))
        with pytest.raises(PlacementFailureError):
            generate_scene(spec)

    def test_circuit_background_varies(self):
        image, _ = generate_scene(SceneSpec(blob_count=0, background="circuit", noise_sigma=0.0))
        assert image.data.std() > 0.01


class TestAnnotations:
    def _scene_file(self, tmp_path, name="img.png"):
        image, _ = generate_scene(SceneSpec(blob_count=0, seed=1))
        save_png(image, tmp_path / name)
        return name

    def test_round_trip(self, tmp_path):
        name = self._scene_file(tmp_path)
        original = [
            Annotation(
                image_path=name,
                gt_boxes=(BBox(2, 3, 10, 12), BBox(20, 20, 30, 31)),
                detections=(Detection(0, BBox(2, 3, 11, 12), 0.75),),
            )
        ]
        path = tmp_path / "ann.json"
        save_annotations(original, path)
        loaded = load_annotations(path)
        assert len(loaded) == 1
        assert loaded[0].gt_boxes == original[0].gt_boxes
        assert loaded[0].detections == original[0].detections

    def test_out_of_bounds_box_clipped_with_warning(self, tmp_path, caplog):
        name = self._scene_file(tmp_path)
        path = tmp_path / "ann.json"
        path.write_text(json.dumps({"image": name, "gt": [[50, 50, 80, 80]]}))
        with caplog.at_level(logging.WARNING, logger="maskgate.scenegen"):
            [ann] = load_annotations(path)
        assert ann.gt_boxes == (BBox(50, 50, 64, 64),)
        assert sum("clipped" in rec.message for rec in caplog.records) == 1

    def test_negative_area_box_rejected(self, tmp_path):
        name = self._scene_file(tmp_path)
        path = tmp_path / "ann.json"
        path.write_text(json.dumps({"image": name, "gt": [[10, 10, 10, 20]]}))
        with pytest.raises(MalformedAnnotationError):
            load_annotations(path)

    def test_missing_image(self, tmp_path):
        path = tmp_path / "ann.json"
        path.write_text(json.dumps({"image": "nowhere.png", "gt": []}))
        with pytest.raises(MissingImageError):
            load_annotations(path)

    def test_single_object_accepted(self, tmp_path):
        name = self._scene_file(tmp_path)
        path = tmp_path / "ann.json"
        path.write_text(json.dumps({"image": name, "gt": [[1, 1, 5, 5]]}))
        assert len(load_annotations(path)) == 1

    def test_malformed_detection(self, tmp_path):
        name = self._scene_file(tmp_path)
        path = tmp_path / "ann.json"
        path.write_text(
            json.dumps({"image": name, "gt": [], "detections": [{"bbox": [1, 1, 2, 2]}]})
        )
        with pytest.raises(MalformedAnnotationError):
            load_annotations(path)

    def test_duplicate_detection_ids_rejected(self, tmp_path):
        name = self._scene_file(tmp_path)
        path = tmp_path / "ann.json"
        det = {"id": 3, "bbox": [1, 1, 4, 4], "score": 0.5}
        path.write_text(json.dumps({"image": name, "gt": [], "detections": [det, det]}))
        with pytest.raises(MalformedAnnotationError):
            load_annotations(path)
