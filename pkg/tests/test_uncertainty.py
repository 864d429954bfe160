"""Noise estimation, injection, and Monte Carlo ensemble contracts."""

import numpy as np
import pytest

from powertrace.core import AlignedSeries
from powertrace.models import LstmConfig, RfConfig, TrainConfig, build_model, fit_forest
from powertrace.preprocess import WindowedDataset, build_datasets
from powertrace.uncertainty import (
    EnsembleConfig,
    NoiseModel,
    collapse_aware_std,
    estimate_feature_noise,
    inject_noise,
    monte_carlo_ensemble,
    rf_bootstrap_uncertainty,
)


def series_from(features: np.ndarray, target=None) -> AlignedSeries:
    n, c = features.shape
    return AlignedSeries(
        timestamps=np.arange(float(n)), dt=1.0, features=features,
        feature_names=tuple(f"f{i}" for i in range(c)),
        target=np.zeros(n) if target is None else target,
    )


def exhaustive_min_variance(x: np.ndarray, seg: int):
    """Independent scan oracle: (start, sample std) of the quietest window."""
    best_var, best_start = np.inf, -1
    for s in range(len(x) - seg + 1):
        v = float(np.var(x[s : s + seg], ddof=1))
        if v < best_var:
            best_var, best_start = v, s
    return best_start, float(np.sqrt(best_var))


class TestEstimateFeatureNoise:
    def test_constant_feature_gives_zero_sigma(self):
        s = series_from(np.full((300, 1), 4.2))
        noise = estimate_feature_noise(s, segment_len=200)
        assert noise.sigmas[0] == 0.0

    def test_plateau_is_selected_over_ramp(self):
        # 200-sample flat plateau embedded in a ramp: the plateau wins
        x = np.concatenate([np.linspace(0, 50, 150), np.full(200, 7.0), np.linspace(7, 80, 150)])
        s = series_from(x[:, None])
        noise = estimate_feature_noise(s, segment_len=200)
        start, sigma = exhaustive_min_variance(x, 200)
        assert noise.segment_starts[0] == start
        assert 150 <= noise.segment_starts[0] <= 150  # exactly the plateau
        assert noise.sigmas[0] == pytest.approx(sigma, abs=1e-12)
        assert noise.sigmas[0] < 1e-9

    def test_white_noise_matches_exhaustive_scan(self):
        rng = np.random.default_rng(0)
        x = rng.normal(0, 1.0, 600)
        s = series_from(x[:, None])
        noise = estimate_feature_noise(s, segment_len=200)
        start, sigma = exhaustive_min_variance(x, 200)
        assert noise.segment_starts[0] == start
        assert noise.sigmas[0] == pytest.approx(sigma, rel=1e-9)
        assert noise.sigmas[0] < 1.0  # minimal window sits below the global std

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError):
            estimate_feature_noise(series_from(np.zeros((100, 1))), segment_len=200)

    def test_end_row_restricts_to_training_prefix(self):
        quiet_then_loud = np.concatenate([np.full(250, 1.0), np.random.default_rng(1).normal(0, 5, 250)])
        s = series_from(quiet_then_loud[:, None])
        noise = estimate_feature_noise(s, segment_len=200, end_row=250)
        assert noise.segment_starts[0] <= 50
        assert noise.sigmas[0] == 0.0


def toy_windows(n=24, w=4, c=2, seed=0):
    rng = np.random.default_rng(seed)
    return WindowedDataset(
        X=rng.normal(size=(n, w, c)), y=rng.normal(size=n), dt=1.0,
        t_end=np.arange(n, dtype=float), feature_names=tuple(f"f{i}" for i in range(c)),
    )


class TestInjectNoise:
    def test_zero_sigma_is_bit_identical(self):
        ds = toy_windows()
        noise = NoiseModel(ds.feature_names, np.zeros(2), 200, np.zeros(2, dtype=int))
        out = inject_noise(ds, noise, seed=5)
        np.testing.assert_array_equal(out.X, ds.X)
        np.testing.assert_array_equal(out.y, ds.y)

    def test_same_seed_reproduces(self):
        ds = toy_windows()
        noise = NoiseModel(ds.feature_names, np.array([0.5, 1.0]), 200, np.zeros(2, dtype=int))
        a = inject_noise(ds, noise, seed=7)
        b = inject_noise(ds, noise, seed=7)
        np.testing.assert_array_equal(a.X, b.X)

    def test_targets_untouched(self):
        ds = toy_windows()
        noise = NoiseModel(ds.feature_names, np.array([0.5, 1.0]), 200, np.zeros(2, dtype=int))
        out = inject_noise(ds, noise, seed=3)
        np.testing.assert_array_equal(out.y, ds.y)
        np.testing.assert_array_equal(out.t_end, ds.t_end)

    def test_sample_mean_of_deltas_near_zero(self):
        ds = toy_windows(n=500, w=20, c=2, seed=2)  # 10^5 cells per feature
        sigma = 0.8
        noise = NoiseModel(ds.feature_names, np.array([sigma, sigma]), 200, np.zeros(2, dtype=int))
        out = inject_noise(ds, noise, seed=11)
        deltas = (out.X - ds.X).ravel()
        n_cells = deltas.size
        assert abs(deltas.mean()) < 3.0 * sigma / np.sqrt(n_cells)

    def test_feature_name_mismatch_rejected(self):
        ds = toy_windows()
        noise = NoiseModel(("other", "names"), np.zeros(2), 200, np.zeros(2, dtype=int))
        with pytest.raises(ValueError):
            inject_noise(ds, noise, seed=0)


def learnable_series(n=260, seed=0):
    rng = np.random.default_rng(seed)
    f0 = np.sin(np.arange(n) / 5.0) + 0.05 * rng.normal(size=n)
    f1 = rng.normal(size=n)
    target = 2.0 * f0 + 0.1 * rng.normal(size=n)
    return series_from(np.column_stack([f0, f1]), target=target)


def tiny_builder(seed: int):
    return build_model("lstm", LstmConfig(input_dim=2, hidden=4, layers=1, dropout=0.2), seed)


TINY_TRAIN = TrainConfig(batch=32, lr=0.01, epochs=3, seed=0)


class TestMonteCarloEnsemble:
    def make_splits(self):
        series = learnable_series()
        return build_datasets(series, window=4, stride=1)

    def test_all_sources_off_collapses_exactly(self):
        scaler, tr, va, te = self.make_splits()
        cfg = EnsembleConfig(
            runs=3, dropout_p=0.0, inject_train_noise=False,
            inject_test_noise=False, reinitialize_weights=False, base_seed=1,
        )
        result = monte_carlo_ensemble(tiny_builder, tr, va, te, cfg, TINY_TRAIN, scaler=scaler)
        np.testing.assert_array_equal(result.std_instant, np.zeros(te.n_windows))
        np.testing.assert_array_equal(result.std_cumulative, np.zeros(te.n_windows))
        for name, (_, delta) in result.summaries.items():
            assert delta == 0.0, name

    def test_dropout_alone_produces_spread(self):
        scaler, tr, va, te = self.make_splits()
        cfg = EnsembleConfig(
            runs=2, dropout_p=0.2, inject_train_noise=False,
            inject_test_noise=False, reinitialize_weights=False, base_seed=2,
        )
        result = monte_carlo_ensemble(tiny_builder, tr, va, te, cfg, TINY_TRAIN, scaler=scaler)
        assert np.any(result.std_instant > 0)

    def test_summaries_match_direct_recomputation(self):
        scaler, tr, va, te = self.make_splits()
        cfg = EnsembleConfig(runs=4, dropout_p=0.1, inject_train_noise=False,
                             inject_test_noise=False, reinitialize_weights=True, base_seed=3)
        result = monte_carlo_ensemble(tiny_builder, tr, va, te, cfg, TINY_TRAIN, scaler=scaler)
        for name, vals in result.per_run.items():
            mean, delta = result.summaries[name]
            assert mean == pytest.approx(float(np.mean(vals)), abs=1e-9)
            assert delta == pytest.approx(float(np.std(vals)), abs=1e-9)
            assert delta >= 0.0

    def test_noise_injection_requires_model(self):
        scaler, tr, va, te = self.make_splits()
        cfg = EnsembleConfig(runs=2, inject_train_noise=True, base_seed=0)
        with pytest.raises(ValueError):
            monte_carlo_ensemble(tiny_builder, tr, va, te, cfg, TINY_TRAIN, noise=None)

    def test_std_permutation_invariant_by_construction(self):
        # aggregate std must not depend on run order: compare two base seeds
        # mapping to the same run set is impossible, so check the reducer itself
        preds = np.random.default_rng(4).normal(size=(6, 40))
        perm = np.random.default_rng(5).permutation(6)
        np.testing.assert_allclose(
            collapse_aware_std(preds), collapse_aware_std(preds[perm]), atol=1e-15
        )

    def test_runs_invariant_n_at_least_two(self):
        with pytest.raises(ValueError):
            EnsembleConfig(runs=1)

    def test_added_noise_does_not_shrink_spread(self):
        # doubling every sigma must not decrease the median per-timestep std
        scaler, tr, va, te = self.make_splits()
        sigmas = np.array([0.05, 0.05])
        medians = {1.0: [], 2.0: []}
        for rep in range(5):
            for factor in (1.0, 2.0):
                noise = NoiseModel(tr.feature_names, sigmas * factor, 200, np.zeros(2, dtype=int))
                cfg = EnsembleConfig(
                    runs=3, dropout_p=0.0, inject_train_noise=False,
                    inject_test_noise=True, reinitialize_weights=False,
                    base_seed=100 + rep,
                )
                result = monte_carlo_ensemble(
                    tiny_builder, tr, va, te, cfg, TINY_TRAIN, noise=noise, scaler=scaler
                )
                medians[factor].append(float(np.median(result.std_instant)))
        assert np.median(medians[2.0]) >= np.median(medians[1.0])


class TestRfBootstrapUncertainty:
    def test_single_tree_zero_std(self):
        ds = toy_windows(n=30, seed=6)
        trained = fit_forest(ds, RfConfig(n_trees=1, bootstrap=False))
        with pytest.warns(UserWarning):
            result = rf_bootstrap_uncertainty(trained, ds)
        np.testing.assert_array_equal(result.std_instant, np.zeros(30))

    def test_identical_trees_zero_std(self):
        ds = toy_windows(n=30, seed=7)
        trained = fit_forest(ds, RfConfig(n_trees=4, bootstrap=False))
        result = rf_bootstrap_uncertainty(trained, ds)
        np.testing.assert_array_equal(result.std_instant, np.zeros(30))

    def test_bootstrap_spread_on_noisy_data(self):
        rng = np.random.default_rng(8)
        n = 300
        x = rng.normal(size=(n, 1, 3))
        y = x[:, 0, 0] + rng.normal(0, 0.5, n)
        ds = WindowedDataset(X=x, y=y, dt=1.0, t_end=np.arange(n, dtype=float),
                             feature_names=("a", "b", "c"))
        trained = fit_forest(ds, RfConfig(n_trees=100, max_depth=6, seed=0))
        result = rf_bootstrap_uncertainty(trained, ds)
        assert (result.std_instant > 0).mean() >= 0.9
        assert result.n_runs == 100

    def test_requires_forest(self):
        ds = toy_windows(n=10, seed=9)
        from powertrace.models import train as train_fn

        model = tiny_builder(0)
        trained = train_fn(model, ds, ds, TrainConfig(batch=8, epochs=1, seed=0))
        with pytest.raises(ValueError):
            rf_bootstrap_uncertainty(trained, ds)
