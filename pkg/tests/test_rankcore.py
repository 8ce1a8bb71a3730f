import numpy as np
import pytest

from dynrep import numerics as num
from dynrep import rankcore, seqgen
from dynrep.rankcore import DynRep

from conftest import random_window


def constant_window(half_width, value=0.3, shape=(3, 8, 8), dtype=np.float64):
    frames = np.full((2 * half_width + 1, *shape), value, dtype=dtype)
    return seqgen.Window(center_index=half_width, half_width=half_width, stride=1, frames=frames)


def brute_force_grad(d, window, gamma, theta, include_center=True):
    """Independent gradient: 2*gamma*d - sum over violated pairs of (V_a - V_b)."""
    t = window.half_width
    grad = 2.0 * gamma * np.asarray(d, dtype=np.float64)
    for p in rankcore.enumerate_pairs(t, include_center):
        va = window.frames[t + p.a].astype(np.float64)
        vb = window.frames[t + p.b].astype(np.float64)
        m = float((np.asarray(d) * va).sum() - (np.asarray(d) * vb).sum())
        if theta - m > 0:
            grad -= va - vb
    return grad


class TestScore:
    def test_zero_kernel(self, rng):
        v = rng.random((3, 4, 4))
        d = DynRep(np.zeros((3, 4, 4)), "oracle", 1)
        assert rankcore.score(d, v) == 0.0

    def test_all_ones(self):
        d = DynRep(np.ones((3, 5, 4)), "network", 1)
        assert rankcore.score(d, np.ones((3, 5, 4))) == 60.0

    def test_matches_direct_summation(self, rng):
        d = rng.standard_normal((2, 3, 3))
        v = rng.random((2, 3, 3))
        direct = 0.0
        for a, b in zip(d.ravel(), v.ravel()):
            direct += float(a) * float(b)
        assert rankcore.score(d, v) == direct

    def test_origin_validated(self):
        with pytest.raises(ValueError, match="origin"):
            DynRep(np.zeros((1, 2, 2)), "guess", 0)


class TestEnumeratePairs:
    def test_empty_for_zero(self):
        assert rankcore.enumerate_pairs(0) == []

    def test_t3_explicit(self):
        got = {(p.a, p.b) for p in rankcore.enumerate_pairs(3)}
        expected = {
            (-2, -3), (-1, -3), (0, -3), (-1, -2), (0, -2), (0, -1),
            (0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3),
        }
        assert got == expected
        assert len(got) == 12

    @pytest.mark.parametrize("t", [1, 2, 3, 5, 9])
    def test_cardinality(self, t):
        assert len(rankcore.enumerate_pairs(t)) == t * (t + 1)
        assert len(rankcore.enumerate_pairs(t, include_center=False)) == t * (t - 1)

    def test_sides_balanced_and_valid(self):
        pairs = rankcore.enumerate_pairs(4)
        past = [p for p in pairs if p.side == "past"]
        future = [p for p in pairs if p.side == "future"]
        assert len(past) == len(future) == 10
        for p in pairs:
            assert abs(p.a) < abs(p.b)
            assert p.a == 0 or p.a * p.b > 0

    def test_reversal_maps_onto_itself(self):
        pairs = {(p.a, p.b) for p in rankcore.enumerate_pairs(5)}
        assert {(-a, -b) for a, b in pairs} == pairs


class TestDelta:
    def test_zero_kernel_all_pairs(self, rng):
        w = random_window(rng, 3)
        d = np.zeros((3, 8, 8))
        for p in rankcore.enumerate_pairs(3):
            assert rankcore.delta(d, w, p.a, p.b) == 0.0

    def test_constant_window_all_pairs(self, rng):
        w = constant_window(3)
        d = rng.standard_normal((3, 8, 8))
        for p in rankcore.enumerate_pairs(3):
            assert rankcore.delta(d, w, p.a, p.b) == 0.0

    def test_sign_matches_score_enumeration(self, rng):
        w = random_window(rng, 3)
        d = w.center.copy()
        scores = [rankcore.score(d, f) for f in w.frames]
        for p in rankcore.enumerate_pairs(3):
            expected = scores[3 + p.a] - scores[3 + p.b]
            assert rankcore.delta(d, w, p.a, p.b) == pytest.approx(expected, rel=1e-14)

    def test_invalid_pairs_name_condition(self, rng):
        w = random_window(rng, 3)
        d = np.zeros((3, 8, 8))
        with pytest.raises(ValueError, match=r"\|a - t\| < \|b - t\|"):
            rankcore.delta(d, w, 2, 1)
        with pytest.raises(ValueError, match="opposite sides"):
            rankcore.delta(d, w, -1, 2)
        with pytest.raises(ValueError, match="include_center=False"):
            rankcore.delta(d, w, 0, 2, include_center=False)
        with pytest.raises(ValueError, match="outside window"):
            rankcore.delta(d, w, 1, 5)


class TestRankLoss:
    def test_zero_kernel_closed_form(self, rng):
        # theta chosen exactly representable so the repeated hinge sum is exact
        theta, eps = 0.015625, 0.25
        w = random_window(rng, 3)
        rep = rankcore.rank_loss(np.zeros((3, 8, 8)), w, gamma=1e-3, eps=eps, theta=theta)
        assert rep.loss == -eps + 12 * theta
        assert all(m == 0.0 for m in rep.margins.values())
        assert len(rep.violated) == 12

    def test_zero_kernel_constant_window_zero_grad(self):
        w = constant_window(3)
        rep = rankcore.rank_loss(np.zeros((3, 8, 8)), w, gamma=1e-3, eps=0.0, theta=0.25)
        np.testing.assert_array_equal(rep.grad_d, np.zeros((3, 8, 8)))

    @pytest.mark.parametrize("t", [3, 5, 9])
    def test_constant_window_closed_form(self, rng, t):
        theta, eps, gamma = 0.5, 0.125, 1e-3
        w = constant_window(t)
        d = rng.standard_normal((3, 8, 8))
        rep = rankcore.rank_loss(d, w, gamma=gamma, eps=eps, theta=theta)
        expected = gamma * num.frobenius_inner(d, d) - eps + t * (t + 1) * theta
        assert rep.loss == expected
        # hinge contributions cancel on a constant window (up to round-off)
        np.testing.assert_allclose(rep.grad_d, 2.0 * gamma * d, atol=1e-13)

    def test_gradient_identity(self, rng):
        for t in (1, 3):
            w = random_window(rng, t)
            d = 0.1 * rng.standard_normal((3, 8, 8))
            theta = rankcore.default_margin(w.frames)
            rep = rankcore.rank_loss(d, w, gamma=1e-3, eps=0.0, theta=theta)
            expected = brute_force_grad(d, w, 1e-3, theta)
            np.testing.assert_allclose(rep.grad_d, expected, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("t", [1, 3, 5])
    def test_gradient_matches_finite_differences(self, rng, t):
        w = random_window(rng, t)
        d = 0.05 * rng.standard_normal((3, 8, 8))
        theta = rankcore.default_margin(w.frames)
        rep = rankcore.rank_loss(d, w, gamma=1e-3, eps=0.0, theta=theta)
        err = num.finite_diff_check(
            lambda dv: rankcore.rank_loss(dv, w, 1e-3, 0.0, theta).loss,
            d, rep.grad_d, h=1e-6,
        )
        assert err < 1e-4

    def test_loss_bounded_below_by_minus_eps(self, rng):
        eps = 0.5
        for _ in range(20):
            w = random_window(rng, 2)
            d = rng.standard_normal((3, 8, 8))
            rep = rankcore.rank_loss(d, w, gamma=1e-3, eps=eps, theta=0.1)
            assert rep.loss >= -eps

    def test_loss_reduces_to_regularizer_when_margins_met(self, rng):
        # frames built so that score decreases with distance from the center
        t = 2
        d = rng.standard_normal((3, 8, 8))
        base = rng.random((3, 8, 8))
        frames = np.stack(
            [base + (t - abs(k)) * 0.1 * d / num.frobenius_inner(d, d) for k in range(-t, t + 1)]
        )
        w = seqgen.Window(center_index=t, half_width=t, stride=1, frames=frames)
        margins = [rankcore.delta(d, w, p.a, p.b) for p in rankcore.enumerate_pairs(t)]
        assert min(margins) > 0
        theta = 0.5 * min(margins)
        gamma = 1e-3
        rep = rankcore.rank_loss(d, w, gamma=gamma, eps=0.25, theta=theta)
        assert rep.violated == []
        assert rep.loss == gamma * num.frobenius_inner(d, d) - 0.25
        np.testing.assert_allclose(rep.grad_d, 2 * gamma * d, rtol=1e-12)

    def test_time_reversal_invariance(self, rng):
        for t in (2, 4):
            w = random_window(rng, t)
            rev = seqgen.Window(w.center_index, t, w.stride, w.frames[::-1].copy())
            d = rng.standard_normal((3, 8, 8))
            theta = rankcore.default_margin(w.frames)
            a = rankcore.rank_loss(d, w, 1e-3, 0.0, theta).loss
            b = rankcore.rank_loss(d, rev, 1e-3, 0.0, theta).loss
            assert a == pytest.approx(b, rel=1e-12)

    def test_max_loss_ceiling(self, rng):
        w = random_window(rng, 3)
        d = np.zeros((3, 8, 8))
        rep = rankcore.rank_loss(d, w, 0.0, 0.0, theta=1.0, max_loss=5.0)
        assert rep.loss == 5.0
        np.testing.assert_array_equal(rep.grad_d, np.zeros_like(d))

    def test_non_finite_kernel_rejected(self, rng):
        w = random_window(rng, 1)
        d = np.full((3, 8, 8), np.nan)
        with pytest.raises(ValueError, match="non-finite"):
            rankcore.rank_loss(d, w, 1e-3, 0.0, 0.1)


class TestRankingAccuracy:
    def test_zero_kernel_all_ties(self, rng):
        w = random_window(rng, 3)
        assert rankcore.ranking_accuracy(np.zeros((3, 8, 8)), w) == 0.0

    def test_t0_rejected(self, rng):
        w = random_window(rng, 0)
        with pytest.raises(ValueError, match="no pairs"):
            rankcore.ranking_accuracy(np.zeros((3, 8, 8)), w)

    def test_scale_invariance(self, rng):
        w = random_window(rng, 3)
        d = rng.standard_normal((3, 8, 8))
        base = rankcore.ranking_accuracy(d, w)
        for alpha in (0.5, 2.0, 173.0):
            assert rankcore.ranking_accuracy(alpha * d, w) == base

    def test_score_scale_covariance(self, rng):
        d = rng.standard_normal((2, 4, 4))
        v = rng.random((2, 4, 4))
        assert rankcore.score(3.0 * d, v) == pytest.approx(3.0 * rankcore.score(d, v), rel=1e-14)

    def test_random_kernels_near_chance(self, rng):
        accs = []
        for _ in range(300):
            w = random_window(rng, 2, shape=(1, 6, 6))
            d = rng.standard_normal((1, 6, 6))
            accs.append(rankcore.ranking_accuracy(d, w))
        assert abs(float(np.mean(accs)) - 0.5) < 0.08

    def test_center_dominance_when_perfect(self, rng):
        # accuracy 1 forces the center to outscore every other frame
        for _ in range(50):
            w = random_window(rng, 2, shape=(1, 5, 5))
            d = rng.standard_normal((1, 5, 5))
            if rankcore.ranking_accuracy(d, w) == 1.0:
                scores = [rankcore.score(d, f) for f in w.frames]
                assert all(scores[2] > s for i, s in enumerate(scores) if i != 2)


class TestCenterFrames:
    def test_zero_mean(self, rng):
        w = random_window(rng, 2)
        c = rankcore.center_frames(w)
        means = c.frames.reshape(c.frames.shape[0], -1).mean(axis=1)
        np.testing.assert_allclose(means, 0.0, atol=1e-12)

    def test_pair_structure_unchanged(self, rng):
        w = random_window(rng, 2)
        c = rankcore.center_frames(w)
        assert c.half_width == w.half_width and c.stride == w.stride


def test_default_margin_hand_value():
    frames = [np.full((1, 2, 2), 3.0), np.full((1, 2, 2), 4.0)]
    # norms are 6 and 8, mean 7
    assert rankcore.default_margin(frames, fraction=0.01) == pytest.approx(0.07)
