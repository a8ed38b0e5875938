import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskgate.attribution import (
    AttributionMap,
    AttributionMethod,
    extract_points,
    grad_cam,
    integrated_gradients,
    load_external_map,
    load_points,
    make_baseline,
    save_points,
)
from maskgate.core import BBox, Detection, GrayImage
from maskgate.errors import ShapeMismatchError
from maskgate.fileio import write_tensor
from maskgate.toymodel import ScorerTrace, ToyScorer, score

from oracles import naive_grad_cam


def make_map(values, box, instance_id=0, method=AttributionMethod.IG):
    return AttributionMap(instance_id=instance_id, box=box, values=values, method=method)


def random_trace(seed, k=4, hf=8, wf=8, stride=2):
    rng = np.random.default_rng(seed)
    fx0, fy0 = rng.integers(0, wf - 2), rng.integers(0, hf - 2)
    fx1, fy1 = rng.integers(fx0 + 1, wf), rng.integers(fy0 + 1, hf)
    features = rng.normal(size=(k, hf, wf))
    feature_grads = rng.normal(size=(k, hf, wf))
    return ScorerTrace(
        features=features,
        score=0.5,
        input_grad=np.zeros((hf * stride, wf * stride)),
        feature_grads=feature_grads,
        stride=stride,
        box=BBox(int(fx0) * stride, int(fy0) * stride, int(fx1) * stride, int(fy1) * stride),
        feature_box=BBox(int(fx0), int(fy0), int(fx1), int(fy1)),
        input_size=(wf * stride, hf * stride),
    )


class TestIntegratedGradients:
    def test_image_equals_baseline_gives_zero_map(self):
        scorer = ToyScorer.default()
        image = GrayImage(np.full((16, 16), 0.4))
        det = Detection(0, BBox(2, 2, 12, 12), 0.9)
        amap = integrated_gradients(scorer, image, image, det, n_steps=5)
        assert np.all(amap.values == 0.0)

    def test_shape_mismatch(self):
        scorer = ToyScorer.default()
        with pytest.raises(ShapeMismatchError):
            integrated_gradients(
                scorer,
                GrayImage(np.zeros((8, 8))),
                GrayImage(np.zeros((4, 4))),
                Detection(0, BBox(0, 0, 4, 4), 0.5),
                n_steps=2,
            )

    def test_completeness_interior_receptive_field(self):
        # identity kernel at stride 2: the receptive field is the sampled
        # lattice, interior to any stride-aligned box
        scorer = ToyScorer(kernels=("identity",), mixing_weights=(3.0,), stride=2)
        rng = np.random.default_rng(0)
        image = GrayImage(rng.random((32, 32)))
        baseline = make_baseline(image, "zeros")
        det = Detection(0, BBox(8, 6, 24, 26), 0.9)
        assert det.bbox.contains_box(scorer.receptive_field(det.bbox, image.size))
        delta = score(scorer, image, det.bbox).score - score(scorer, baseline, det.bbox).score
        for n_steps, tol in ((30, 1e-2), (300, 1e-3)):
            amap = integrated_gradients(scorer, image, baseline, det, n_steps)
            rel_err = abs(amap.values.sum() - delta) / abs(delta)
            assert rel_err <= tol

    def test_linear_scorer_closed_form(self):
        # no ReLU, no sigmoid: the score is linear, so the gradient field is
        # constant and IG reduces to (I - I') * w pixelwise
        scorer = ToyScorer(
            kernels=("identity",), mixing_weights=(2.0,), stride=2,
            use_relu=False, use_sigmoid=False,
        )
        rng = np.random.default_rng(1)
        image = GrayImage(rng.random((16, 16)))
        baseline = GrayImage(rng.random((16, 16)))
        det = Detection(0, BBox(2, 4, 12, 14), 0.9)
        weights = score(scorer, baseline, det.bbox).input_grad
        expected = (image.data - baseline.data) * weights
        expected[: det.bbox.y_min] = 0.0
        expected[det.bbox.y_max :] = 0.0
        expected[:, : det.bbox.x_min] = 0.0
        expected[:, det.bbox.x_max :] = 0.0
        amap = integrated_gradients(scorer, image, baseline, det, n_steps=7)
        assert np.allclose(amap.values, expected, rtol=1e-12, atol=1e-15)

    def test_blur_baseline_stays_in_range(self):
        rng = np.random.default_rng(2)
        image = GrayImage(rng.random((12, 12)))
        blurred = make_baseline(image, "blur")
        assert blurred.data.min() >= 0.0 and blurred.data.max() <= 1.0
        assert not np.array_equal(blurred.data, image.data)


class TestGradCam:
    def test_alpha_one_identity_weighting(self):
        trace = random_trace(0, k=1)
        features = np.abs(np.array(trace.features))
        trace = ScorerTrace(
            features=features,
            score=trace.score,
            input_grad=trace.input_grad,
            feature_grads=np.ones_like(features),
            stride=trace.stride,
            box=trace.box,
            feature_box=trace.feature_box,
            input_size=trace.input_size,
        )
        det = Detection(0, trace.box, 0.9)
        amap = grad_cam(trace, det)
        expected = naive_grad_cam(
            features, trace.feature_grads, trace.feature_box, trace.stride,
            trace.input_size, det.bbox,
        )
        assert np.array_equal(amap.values, expected)
        assert amap.values.max() > 0.0

    def test_relu_annihilates_nonpositive_weights(self):
        trace = random_trace(3, k=2)
        trace = ScorerTrace(
            features=np.abs(np.array(trace.features)),
            score=trace.score,
            input_grad=trace.input_grad,
            feature_grads=-np.abs(np.array(trace.feature_grads)),
            stride=trace.stride,
            box=trace.box,
            feature_box=trace.feature_box,
            input_size=trace.input_size,
        )
        amap = grad_cam(trace, Detection(0, trace.box, 0.9))
        assert np.all(amap.values == 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_double_loop_bit_for_bit(self, seed):
        trace = random_trace(seed)
        det = Detection(0, trace.box, 0.9)
        amap = grad_cam(trace, det)
        expected = naive_grad_cam(
            np.array(trace.features), np.array(trace.feature_grads),
            trace.feature_box, trace.stride, trace.input_size, det.bbox,
        )
        assert np.array_equal(amap.values, expected)

    def test_nonnegative_and_supported_inside_box(self):
        trace = random_trace(11)
        amap = grad_cam(trace, Detection(0, trace.box, 0.9))
        assert amap.values.min() >= 0.0
        outside = np.ones_like(amap.values, dtype=bool)
        outside[trace.box.y_min : trace.box.y_max, trace.box.x_min : trace.box.x_max] = False
        assert np.all(amap.values[outside] == 0.0)


class TestExtractPoints:
    def test_single_nonzero_pixel(self):
        values = np.zeros((10, 10))
        values[4, 5] = -0.7
        points = extract_points(make_map(values, BBox(0, 0, 10, 10)), top_k=5)
        assert len(points) == 1
        assert (points[0].x, points[0].y, points[0].rank) == (5, 4, 1)
        assert points[0].value == -0.7

    def test_tie_breaks_toward_smaller_y_then_x(self):
        values = np.zeros((6, 6))
        values[3, 4] = 0.5
        values[1, 2] = 0.5
        points = extract_points(make_map(values, BBox(0, 0, 6, 6)), top_k=2, min_separation=0)
        assert (points[0].x, points[0].y) == (2, 1)
        assert (points[1].x, points[1].y) == (4, 3)

    def test_full_sort_oracle_with_zero_separation(self):
        rng = np.random.default_rng(4)
        values = rng.normal(size=(12, 12))
        box = BBox(0, 0, 12, 12)
        points = extract_points(make_map(values, box), top_k=5, min_separation=0)
        flat = [
            (-abs(values[y, x]), y, x)
            for y in range(12)
            for x in range(12)
            if values[y, x] != 0.0
        ]
        flat.sort()
        expected = [(x, y) for _, y, x in flat[:5]]
        assert [(p.x, p.y) for p in points] == expected
        assert [p.rank for p in points] == [1, 2, 3, 4, 5]

    @given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.integers(1, 8))
    @settings(max_examples=40, deadline=None)
    def test_separation_and_rank_properties(self, seed, min_sep, top_k):
        rng = np.random.default_rng(seed)
        values = np.zeros((14, 14))
        box = BBox(2, 3, 12, 13)
        values[box.y_min : box.y_max, box.x_min : box.x_max] = rng.normal(size=(10, 10))
        points = extract_points(make_map(values, box), top_k=top_k, min_separation=min_sep)
        assert len(points) <= top_k
        magnitudes = [abs(p.value) for p in points]
        assert magnitudes == sorted(magnitudes, reverse=True)
        assert [p.rank for p in points] == list(range(1, len(points) + 1))
        for i, p in enumerate(points):
            assert box.contains_point(p.x, p.y)
            for q in points[i + 1 :]:
                assert max(abs(p.x - q.x), abs(p.y - q.y)) >= max(min_sep, 1)


class TestExternalMaps:
    def test_round_trip_zeroes_outside_box(self, tmp_path):
        rng = np.random.default_rng(8)
        values = rng.normal(size=(10, 10)).astype(np.float32)
        path = tmp_path / "ext.sodt"
        write_tensor(values, path)
        det = Detection(2, BBox(2, 2, 7, 7), 0.8)
        amap = load_external_map(path, det, expected_size=(10, 10))
        assert amap.method is AttributionMethod.EXTERNAL
        inside = np.asarray(values, dtype=np.float64)[2:7, 2:7]
        assert np.array_equal(amap.values[2:7, 2:7], inside)
        assert np.all(amap.values[:2] == 0.0)

    def test_shape_mismatch(self, tmp_path):
        path = tmp_path / "ext.sodt"
        write_tensor(np.zeros((4, 4), dtype=np.float32), path)
        with pytest.raises(ShapeMismatchError):
            load_external_map(path, Detection(0, BBox(0, 0, 2, 2), 0.5), expected_size=(8, 8))

    def test_negative_values_preserved(self, tmp_path):
        values = np.full((6, 6), -0.5, dtype=np.float32)
        path = tmp_path / "neg.sodt"
        write_tensor(values, path)
        det = Detection(0, BBox(1, 1, 5, 5), 0.5)
        amap = load_external_map(path, det)
        assert amap.values[2, 2] == -0.5


class TestPointsJson:
    def test_round_trip(self, tmp_path):
        values = np.zeros((8, 8))
        values[2, 3] = 1.0
        values[5, 6] = -2.0
        points = extract_points(make_map(values, BBox(0, 0, 8, 8)), top_k=4)
        path = tmp_path / "points.json"
        save_points(points, path)
        assert load_points(path) == points
