import numpy as np
import pytest

from maskgate.core import BBox, GrayImage
from maskgate.errors import BoxOutOfBoundsError
from maskgate.toymodel import ToyScorer, score


def fd_input_gradient(scorer, image, box, step=1e-4):
    """Central finite differences of the score over every pixel."""
    data = image.data
    grad = np.zeros_like(data)
    for y in range(data.shape[0]):
        for x in range(data.shape[1]):
            plus = data.copy()
            minus = data.copy()
            plus[y, x] += step
            minus[y, x] -= step
            s_plus = score(scorer, GrayImage(np.clip(plus, 0.0, 1.0 + step)), box).score
            s_minus = score(scorer, GrayImage(np.clip(minus, -step, 1.0)), box).score
            grad[y, x] = (s_plus - s_minus) / (2 * step)
    return grad


def pooled_score_from_features(scorer, features, box):
    """Recompute pooling + sigmoid from a feature tensor (oracle path)."""
    fp = scorer.feature_footprint(box)
    z = 0.0
    for k, w in enumerate(scorer.mixing_weights):
        total = 0.0
        count = 0
        for i in range(fp.y_min, fp.y_max):
            for j in range(fp.x_min, fp.x_max):
                total += features[k, i, j]
                count += 1
        z += w * total / count
    return 1.0 / (1.0 + np.exp(-z))


@pytest.fixture
def scorer():
    return ToyScorer.default(stride=2)


class TestForward:
    def test_zero_image_scores_half(self, scorer):
        trace = score(scorer, GrayImage(np.zeros((16, 16))), BBox(2, 2, 10, 10))
        assert trace.score == 0.5

    def test_deterministic(self, scorer):
        rng = np.random.default_rng(7)
        image = GrayImage(rng.random((20, 20)))
        box = BBox(3, 4, 13, 15)
        a = score(scorer, image, box)
        b = score(scorer, image, box)
        assert a.score == b.score
        assert np.array_equal(a.input_grad, b.input_grad)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.feature_grads, b.feature_grads)

    def test_box_out_of_bounds(self, scorer):
        with pytest.raises(BoxOutOfBoundsError):
            score(scorer, GrayImage(np.zeros((8, 8))), BBox(0, 0, 12, 4))

    def test_feature_shapes(self, scorer):
        trace = score(scorer, GrayImage(np.zeros((17, 9))), BBox(0, 0, 9, 17))
        assert trace.features.shape == (4, 9, 5)
        assert trace.feature_grads.shape == (4, 9, 5)
        assert trace.input_grad.shape == (17, 9)

    def test_score_in_open_unit_interval(self, scorer):
        rng = np.random.default_rng(3)
        trace = score(scorer, GrayImage(rng.random((12, 12))), BBox(1, 1, 9, 9))
        assert 0.0 < trace.score < 1.0

    def test_brightening_never_decreases_identity_score(self):
        identity = ToyScorer(kernels=("identity",), mixing_weights=(2.0,), stride=2)
        rng = np.random.default_rng(11)
        data = rng.random((16, 16)) * 0.5
        box = BBox(2, 2, 12, 12)
        dim = score(identity, GrayImage(data), box).score
        bright = score(identity, GrayImage(data + 0.3), box).score
        assert bright >= dim


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_input_grad_matches_finite_differences(self, scorer, seed):
        rng = np.random.default_rng(seed)
        image = GrayImage(rng.uniform(0.05, 0.95, (16, 16)))
        box = BBox(3, 2, 11, 12)
        trace = score(scorer, image, box)
        fd = fd_input_gradient(scorer, image, box)
        assert np.max(np.abs(trace.input_grad - fd)) <= 1e-4

    def test_feature_grads_match_finite_differences(self, scorer):
        rng = np.random.default_rng(5)
        image = GrayImage(rng.random((16, 16)))
        box = BBox(2, 4, 10, 12)
        trace = score(scorer, image, box)
        fp = trace.feature_box
        step = 1e-4
        for k in (0, 3):
            for (i, j) in [(fp.y_min, fp.x_min), (fp.y_max - 1, fp.x_max - 1), (0, 0)]:
                plus = np.array(trace.features, dtype=np.float64)
                minus = plus.copy()
                plus[k, i, j] += step
                minus[k, i, j] -= step
                fd = (
                    pooled_score_from_features(scorer, plus, box)
                    - pooled_score_from_features(scorer, minus, box)
                ) / (2 * step)
                assert abs(trace.feature_grads[k, i, j] - fd) <= 1e-4

    def test_gradient_zero_outside_receptive_field(self, scorer):
        rng = np.random.default_rng(9)
        image = GrayImage(rng.random((32, 32)))
        box = BBox(12, 12, 20, 20)
        trace = score(scorer, image, box)
        rf = scorer.receptive_field(box, image.size)
        outside = np.ones((32, 32), dtype=bool)
        outside[rf.y_min : rf.y_max, rf.x_min : rf.x_max] = False
        assert np.all(trace.input_grad[outside] == 0.0)

    def test_identity_receptive_field_is_sampled_lattice(self):
        identity = ToyScorer(kernels=("identity",), mixing_weights=(1.0,), stride=2)
        box = BBox(4, 6, 12, 10)  # aligned to the stride
        rf = identity.receptive_field(box, (32, 32))
        assert box.contains_box(rf)
