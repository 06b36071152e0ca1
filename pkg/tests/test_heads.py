import math

import numpy as np
import pytest

from graftstereo import (DisparityMap, EmptyMask, ProbVolume, ShapeMismatch,
                         Tensor, cross_entropy_loss, hypothesis_mask,
                         laplacian_target, regress_disparity, smooth_l1_loss,
                         softmax_over_disparity, total_loss)
from graftstereo.errors import (DisparityOutOfRange, NonPositiveScale,
                                NonPositiveTemperature)

from oracles import cross_entropy_ref, laplacian_ref, regress_ref, smooth_l1_ref


def prob(a):
    return ProbVolume(Tensor(np.asarray(a, dtype=np.float32)))


def dmap(a, mask=None):
    return DisparityMap(Tensor(np.asarray(a, dtype=np.float32)), mask=mask)


class TestSoftmax:
    def test_uniform_scores(self):
        p = softmax_over_disparity(Tensor.zeros((4, 2, 2))).data.array
        np.testing.assert_allclose(p, 0.25, atol=1e-7)

    def test_temperature_sharpens(self, rng):
        s = Tensor(rng.standard_normal((5, 3, 3)).astype(np.float32))
        soft = softmax_over_disparity(s, temperature=2.0).data.array
        sharp = softmax_over_disparity(s, temperature=0.1).data.array
        assert sharp.max(axis=0).min() > soft.max(axis=0).min()

    def test_valid_mask_zeroes_out_of_frame(self, rng):
        s = Tensor(rng.standard_normal((3, 2, 4)).astype(np.float32))
        p = softmax_over_disparity(s, valid=hypothesis_mask(2, 2, 4)).data.array
        assert (p[1:, :, 0] == 0).all()
        np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-6)

    def test_nonpositive_temperature(self):
        with pytest.raises(NonPositiveTemperature):
            softmax_over_disparity(Tensor.zeros((2, 2, 2)), temperature=0.0)


class TestRegress:
    def test_matches_scalar_loop(self, rng):
        a = rng.random((5, 3, 4)).astype(np.float32) + 0.1
        a /= a.sum(axis=0, keepdims=True)
        got = regress_disparity(prob(a)).data.array
        np.testing.assert_allclose(got, regress_ref(a.astype(np.float64)),
                                   rtol=1e-5, atol=1e-5)

    def test_one_hot_recovers_index(self):
        a = np.zeros((4, 1, 1), dtype=np.float32)
        a[2] = 1.0
        assert regress_disparity(prob(a)).data.array[0, 0] == 2.0


class TestLaplacianTarget:
    def test_matches_scalar_oracle(self):
        t = laplacian_target(dmap([[2.0]]), b=1.0, d_max=4).data.array
        want = laplacian_ref(2.0, 1.0, 4)
        np.testing.assert_allclose(t[:, 0, 0], want, atol=1e-6)

    def test_center_mass_value(self):
        # D=2, b=1, d_max=4: peak bin is 1 / (1 + 2/e + 2/e^2)
        t = laplacian_target(dmap([[2.0]]), b=1.0, d_max=4).data.array
        want = 1.0 / (1.0 + 2.0 * math.exp(-1.0) + 2.0 * math.exp(-2.0))
        np.testing.assert_allclose(t[2, 0, 0], want, atol=1e-6)
        np.testing.assert_allclose(want, 0.4983978, atol=1e-7)

    def test_subpixel_ground_truth(self):
        t = laplacian_target(dmap([[1.5]]), b=0.7, d_max=3).data.array
        want = laplacian_ref(1.5, 0.7, 3)
        np.testing.assert_allclose(t[:, 0, 0], want, atol=1e-6)

    def test_normalized_per_pixel(self, rng):
        gv = rng.random((4, 6)).astype(np.float32) * 3
        t = laplacian_target(dmap(gv), b=0.5, d_max=3).data.array
        np.testing.assert_allclose(t.sum(axis=0), 1.0, atol=1e-6)

    def test_masked_pixels_get_uniform_placeholder(self):
        mask = np.array([[True, False]])
        t = laplacian_target(dmap([[1.0, 99.0]], mask=mask), 1.0, 3).data.array
        np.testing.assert_allclose(t[:, 0, 1], 0.25, atol=1e-7)

    def test_out_of_range_gt_rejected(self):
        with pytest.raises(DisparityOutOfRange):
            laplacian_target(dmap([[7.0]]), 1.0, 4)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(NonPositiveScale):
            laplacian_target(dmap([[1.0]]), 0.0, 4)


class TestCrossEntropy:
    def test_uniform_vs_one_hot_is_log4(self):
        pred = prob(np.full((4, 1, 1), 0.25))
        one_hot = np.zeros((4, 1, 1), dtype=np.float32)
        one_hot[1] = 1.0
        got = cross_entropy_loss(pred, prob(one_hot), np.ones((1, 1), bool))
        assert abs(got - math.log(4.0)) < 1e-6

    def test_matches_scalar_loop(self, rng):
        p = rng.random((4, 3, 5)).astype(np.float32) + 0.05
        p /= p.sum(axis=0, keepdims=True)
        t = rng.random((4, 3, 5)).astype(np.float32)
        t /= t.sum(axis=0, keepdims=True)
        mask = rng.random((3, 5)) > 0.4
        got = cross_entropy_loss(prob(p), prob(t), mask)
        want = cross_entropy_ref(p.astype(np.float64), t.astype(np.float64),
                                 mask)
        assert abs(got - want) < 1e-6

    def test_minimized_at_matching_prediction(self, rng):
        t = rng.random((4, 2, 2)).astype(np.float32) + 0.1
        t /= t.sum(axis=0, keepdims=True)
        mask = np.ones((2, 2), bool)
        at_target = cross_entropy_loss(prob(t), prob(t), mask)
        q = np.roll(t, 1, axis=0)
        assert cross_entropy_loss(prob(q), prob(t), mask) > at_target

    def test_swap_log_transposes_arguments(self, rng):
        p = rng.random((3, 2, 2)).astype(np.float32) + 0.1
        p /= p.sum(axis=0, keepdims=True)
        t = rng.random((3, 2, 2)).astype(np.float32) + 0.1
        t /= t.sum(axis=0, keepdims=True)
        mask = np.ones((2, 2), bool)
        assert (cross_entropy_loss(prob(p), prob(t), mask, swap_log=True)
                == pytest.approx(cross_entropy_loss(prob(t), prob(p), mask)))

    def test_empty_mask(self):
        with pytest.raises(EmptyMask):
            cross_entropy_loss(prob(np.ones((2, 1, 1))), prob(np.ones((2, 1, 1))),
                               np.zeros((1, 1), bool))


class TestSmoothL1:
    @pytest.mark.parametrize("e,want", [(0.5, 0.125), (1.0, 0.5), (2.0, 1.5)])
    def test_knee_values(self, e, want):
        got = smooth_l1_loss(dmap([[e]]), dmap([[0.0]]), np.ones((1, 1), bool))
        assert got == pytest.approx(want, abs=1e-7)

    def test_matches_scalar_loop(self, rng):
        p = (rng.standard_normal((4, 5)) * 2).astype(np.float32)
        g = (rng.standard_normal((4, 5)) * 2).astype(np.float32)
        mask = rng.random((4, 5)) > 0.3
        got = smooth_l1_loss(dmap(p), dmap(g), mask)
        want = smooth_l1_ref(p.astype(np.float64), g.astype(np.float64), mask)
        assert abs(got - want) < 1e-6


class TestTotalLoss:
    def test_matches_componentwise_arithmetic(self, rng):
        p = rng.random((4, 3, 3)).astype(np.float32) + 0.1
        p /= p.sum(axis=0, keepdims=True)
        t = rng.random((4, 3, 3)).astype(np.float32) + 0.1
        t /= t.sum(axis=0, keepdims=True)
        dp = dmap(rng.standard_normal((3, 3)).astype(np.float32))
        dg = dmap(rng.standard_normal((3, 3)).astype(np.float32))
        mask = np.ones((3, 3), bool)
        ce = cross_entropy_loss(prob(p), prob(t), mask)
        sl1 = smooth_l1_loss(dp, dg, mask)
        got = total_loss([(prob(p), dp)], (prob(t), dg), [0.7], 0.1, mask)
        assert got == pytest.approx(0.7 * (ce + 0.1 * sl1), abs=1e-12)

    def test_multi_head_weighting(self, rng):
        p = np.full((2, 1, 1), 0.5, dtype=np.float32)
        heads = [(prob(p), dmap([[0.0]])), (prob(p), dmap([[2.0]]))]
        target = (prob(p), dmap([[0.0]]))
        mask = np.ones((1, 1), bool)
        got = total_loss(heads, target, [1.0, 0.5], 0.1, mask)
        ce = cross_entropy_loss(prob(p), prob(p), mask)
        assert got == pytest.approx(1.0 * ce + 0.5 * (ce + 0.1 * 1.5), abs=1e-9)

    def test_length_mismatch(self):
        p = prob(np.full((2, 1, 1), 0.5))
        with pytest.raises(ShapeMismatch):
            total_loss([(p, dmap([[0.0]]))], (p, dmap([[0.0]])),
                       [1.0, 1.0], 0.1, np.ones((1, 1), bool))
