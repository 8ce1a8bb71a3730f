import numpy as np
import pytest

from dynrep import drnet, mdr, numerics
from dynrep.drnet import DrNet, ModelSpec
from dynrep.mdr import RegressorConfig


def anova_icc_oracle(ratings):
    """Brute-force two-way ANOVA: explicit cell residuals, no shared code path."""
    ratings = np.asarray(ratings, dtype=np.float64)
    n, k = ratings.shape
    grand = ratings.sum() / (n * k)
    bms = 0.0
    for i in range(n):
        bms += (ratings[i].mean() - grand) ** 2
    bms = k * bms / (n - 1)
    ems = 0.0
    for i in range(n):
        for j in range(k):
            resid = ratings[i, j] - ratings[i].mean() - ratings[:, j].mean() + grand
            ems += resid**2
    ems /= (n - 1) * (k - 1)
    return (bms - ems) / (bms + (k - 1) * ems)


def make_models(levels, size=16, seed=40):
    spec = ModelSpec(channels=3, height=size, width=size, depth=2, widths=(3, 4))
    models = {}
    for t in levels:
        if t == 0:
            continue
        m = DrNet(spec, seed=seed + t, level=t)
        vec = 0.3 * numerics.make_rng(seed + t).standard_normal(m.parameter_count())
        drnet.set_params(m, vec.astype(np.float32))
        models[t] = m
    return models


class TestBuildStack:
    def test_level_zero_is_input_frame(self, rng):
        frame = rng.random((3, 16, 16)).astype(np.float32)
        stack = mdr.build_stack(frame, {}, [0])
        np.testing.assert_array_equal(stack, frame)

    def test_two_levels_six_channels(self, rng):
        frame = rng.random((3, 16, 16)).astype(np.float32)
        stack = mdr.build_stack(frame, make_models([0, 5]), [0, 5])
        assert stack.shape == (6, 16, 16)
        np.testing.assert_array_equal(stack[:3], frame)

    def test_three_levels_nine_channels(self, rng):
        frame = rng.random((3, 16, 16)).astype(np.float32)
        stack = mdr.build_stack(frame, make_models([0, 3, 5]), [0, 3, 5])
        assert stack.shape == (9, 16, 16)

    def test_missing_checkpoint(self, rng):
        frame = rng.random((3, 16, 16)).astype(np.float32)
        with pytest.raises(ValueError, match="missing checkpoint for level T=5"):
            mdr.build_stack(frame, {}, [0, 5])

    def test_non_ascending_rejected(self, rng):
        frame = rng.random((3, 16, 16)).astype(np.float32)
        with pytest.raises(ValueError, match="ascending"):
            mdr.build_stack(frame, make_models([3, 5]), [5, 3])
        with pytest.raises(ValueError, match="ascending"):
            mdr.build_stack(frame, make_models([3]), [3, 3])

    def test_standardization_applied(self, rng):
        models = make_models([3])
        frames = [rng.random((3, 16, 16)).astype(np.float32) for _ in range(8)]
        stats = mdr.compute_level_stats(models, frames, [0, 3])
        stacked = np.stack([mdr.build_stack(f, models, [0, 3], stats) for f in frames])
        dr_channels = stacked[:, 3:]
        assert abs(dr_channels.mean()) < 0.1
        assert 0.5 < dr_channels.std() < 2.0

    def test_ascending_order_of_channels(self, rng):
        frame = rng.random((3, 16, 16)).astype(np.float32)
        models = make_models([0, 3, 5])
        stack = mdr.build_stack(frame, models, [0, 3, 5])
        np.testing.assert_array_equal(stack[3:6], models[3].forward(frame))
        np.testing.assert_array_equal(stack[6:9], models[5].forward(frame))


class TestIcc:
    def test_perfect_consistency(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert mdr.icc_3_1(np.stack([x, x], axis=1)) == pytest.approx(1.0)

    def test_constant_offset_still_one(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert mdr.icc_3_1(np.stack([x, x + 2.5], axis=1)) == pytest.approx(1.0)

    def test_matches_anova_oracle_on_random_matrices(self, rng):
        for _ in range(10):
            ratings = rng.standard_normal((6, 2))
            assert mdr.icc_3_1(ratings) == pytest.approx(
                anova_icc_oracle(ratings), abs=1e-10
            )

    def test_hand_matrix(self):
        ratings = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 5.0], [4.0, 9.0]])
        assert mdr.icc_3_1(ratings) == pytest.approx(anova_icc_oracle(ratings), abs=1e-12)

    def test_zero_item_variance_rejected(self):
        with pytest.raises(ValueError, match="zero variance"):
            mdr.icc_3_1(np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]))

    def test_too_few_items(self):
        with pytest.raises(ValueError, match="at least 3"):
            mdr.icc_3_1(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_range(self, rng):
        for _ in range(20):
            val = mdr.icc_3_1(rng.standard_normal((8, 2)))
            assert -1.0 <= val <= 1.0


class TestPccMse:
    def test_identity(self, rng):
        x = rng.standard_normal(10)
        assert mdr.pcc(x, x) == pytest.approx(1.0)
        assert mdr.mse(x, x) == 0.0

    def test_negation(self, rng):
        x = rng.standard_normal(10)
        assert mdr.pcc(x, -x) == pytest.approx(-1.0)

    def test_hand_values(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        y = np.array([2.0, 1.0, 4.0, 3.0, 6.0])
        # manual: cov = 2.argmax... computed by hand below
        xc, yc = x - 3.0, y - 3.2
        expected_pcc = (xc * yc).sum() / np.sqrt((xc**2).sum() * (yc**2).sum())
        assert mdr.pcc(x, y) == pytest.approx(expected_pcc, rel=1e-14)
        assert mdr.mse(x, y) == pytest.approx(((x - y) ** 2).mean(), rel=1e-14)

    def test_affine_invariance(self, rng):
        x = rng.standard_normal(20)
        y = rng.standard_normal(20)
        assert mdr.pcc(2.0 * x + 1.0, y) == pytest.approx(mdr.pcc(x, y), rel=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="zero variance"):
            mdr.pcc(np.ones(5), np.arange(5.0))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            mdr.mse(np.ones(3), np.ones(4))


class TestEvaluatePredictions:
    def test_perfect_predictions(self, rng):
        labels = rng.standard_normal((12, 2))
        report = mdr.evaluate_predictions(labels, labels, ["a", "b"])
        for name in ("a", "b"):
            assert report.per_target[name]["icc"] == pytest.approx(1.0)
            assert report.per_target[name]["pcc"] == pytest.approx(1.0)
            assert report.per_target[name]["mse"] == 0.0
        agg = report.aggregates
        assert agg["icc"] == pytest.approx(1.0) and agg["mse"] == 0.0


class TestRegressor:
    def test_constant_labels_converge(self, rng):
        stacks = rng.random((24, 3, 16, 16)).astype(np.float32)
        labels = np.full((24, 1), 0.7, dtype=np.float32)
        cfg = RegressorConfig(widths=(4, 6), epochs=80, batch_size=4,
                              learning_rate=5e-3, seed=1)
        reg, history = mdr.train_regressor(stacks, labels, cfg)
        assert history[-1]["mean_mse"] < 1e-3
        preds = mdr.predict(reg, stacks[:4])
        np.testing.assert_allclose(preds, 0.7, atol=0.05)

    def test_gradient_matches_finite_differences(self, rng):
        stack = rng.random((2, 8, 8))
        label = rng.standard_normal(2)
        cfg = RegressorConfig(widths=(2, 3), seed=3)
        reg = mdr.Regressor(2, 2, cfg, dtype=np.float64)

        def pack(r):
            return np.concatenate([p.ravel() for p, _ in r.param_pairs()])

        def set_vec(r, vec):
            off = 0
            for p, _ in r.param_pairs():
                p[...] = vec[off : off + p.size].reshape(p.shape)
                off += p.size

        cache = {}
        pred = reg.forward(stack, cache)
        diff = pred - label
        reg.zero_grad()
        reg.backward((2.0 / diff.size) * diff, cache)
        analytic = np.concatenate([g.ravel() for _, g in reg.param_pairs()])

        x0 = pack(reg)

        def f(vec):
            set_vec(reg, vec)
            return float(((reg.forward(stack) - label) ** 2).mean())

        err = numerics.finite_diff_check(f, x0, analytic, h=1e-6)
        assert err < 1e-4

    def test_deterministic_training(self, rng):
        stacks = rng.random((12, 3, 16, 16)).astype(np.float32)
        labels = rng.random((12, 2)).astype(np.float32)
        cfg = RegressorConfig(widths=(3, 4), epochs=2, seed=5)
        reg1, h1 = mdr.train_regressor(stacks, labels, cfg)
        reg2, h2 = mdr.train_regressor(stacks, labels, cfg)
        np.testing.assert_array_equal(reg1.conv1.w, reg2.conv1.w)
        assert h1 == h2

    def test_channel_mismatch_rejected(self, rng):
        cfg = RegressorConfig(widths=(2, 3))
        reg = mdr.Regressor(3, 1, cfg)
        with pytest.raises(ValueError, match="channels"):
            reg.forward(rng.random((5, 8, 8)).astype(np.float32))

    def test_checkpoint_roundtrip(self, tmp_path, rng):
        stacks = rng.random((8, 3, 16, 16)).astype(np.float32)
        labels = rng.random((8, 2)).astype(np.float32)
        cfg = RegressorConfig(widths=(3, 4), epochs=1, seed=6)
        stats = {3: (np.array([0.1, 0.2, 0.3]), np.array([1.0, 1.1, 1.2]))}
        reg, _ = mdr.train_regressor(
            stacks, labels, cfg, target_names=["i", "a"], level_stats=stats, levels=[0, 3]
        )
        path = tmp_path / "reg.ckpt"
        mdr.save_regressor(reg, path)
        loaded = mdr.load_regressor(path)
        probe = stacks[0]
        np.testing.assert_array_equal(reg.forward(probe), loaded.forward(probe))
        assert loaded.levels == [0, 3]
        assert loaded.target_names == ["i", "a"]
        np.testing.assert_allclose(loaded.level_stats[3][0], stats[3][0])

    def test_corrupt_payload(self, tmp_path, rng):
        cfg = RegressorConfig(widths=(2, 3))
        reg = mdr.Regressor(3, 1, cfg)
        path = tmp_path / "reg.ckpt"
        mdr.save_regressor(reg, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="payload"):
            mdr.load_regressor(path)
