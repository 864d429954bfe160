"""Frequentist Monte Carlo uncertainty over three stochastic sources.

The ensemble repeats train-and-predict N times while optionally (1) injecting
feature noise into train and test inputs, (2) sampling dropout masks at
inference, and (3) re-initializing weights per run. Feature noise is Gaussian
with per-feature sigma estimated from the steadiest 200-sample training
segment. Disabling every source collapses the spread to exactly zero.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .core import AlignedSeries
from .evaluation import EvaluationPair, accumulate, cumulative_percent_errors, mae, rmse
from .models.forest import rf_per_tree
from .models.training import TrainConfig, TrainedModel, predict, train
from .preprocess import ScalerParams, WindowedDataset, invert_target


@dataclass(frozen=True)
class NoiseModel:
    """Per-feature Gaussian sigma plus the segment each was estimated from."""

    feature_names: tuple[str, ...]
    sigmas: np.ndarray
    segment_len: int
    segment_starts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=np.float64))
        object.__setattr__(
            self, "segment_starts", np.asarray(self.segment_starts, dtype=np.int64)
        )
        if np.any(self.sigmas < 0):
            raise ValueError("noise sigma must be >= 0")

    def scaled(self, factor: float) -> "NoiseModel":
        return NoiseModel(
            self.feature_names, self.sigmas * factor, self.segment_len, self.segment_starts
        )

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "sigmas": [float(s) for s in self.sigmas],
            "segment_len": self.segment_len,
            "segment_starts": [int(s) for s in self.segment_starts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(
            tuple(d["feature_names"]),
            np.asarray(d["sigmas"]),
            int(d["segment_len"]),
            np.asarray(d["segment_starts"]),
        )


def estimate_feature_noise(
    series: AlignedSeries, segment_len: int = 200, end_row: int | None = None
) -> NoiseModel:
    """Sigma per feature = sample std of its minimal-variance contiguous segment.

    `end_row` restricts the scan to a training prefix; estimation must never
    see validation or test rows.
    """
    feats = series.features[:end_row] if end_row is not None else series.features
    t = len(feats)
    if t < segment_len:
        raise ValueError(
            f"need at least {segment_len} training rows to estimate noise, got {t}"
        )
    sigmas = np.empty(len(series.feature_names))
    starts = np.empty(len(series.feature_names), dtype=np.int64)
    for j in range(feats.shape[1]):
        windows = np.lib.stride_tricks.sliding_window_view(feats[:, j], segment_len)
        variances = windows.var(axis=1, ddof=1)
        best = int(np.argmin(variances))
        starts[j] = best
        segment = windows[best]
        if np.ptp(segment) == 0.0:
            # np.var of identical values is ~1e-31, not 0; a truly flat
            # segment must give sigma exactly 0
            sigmas[j] = 0.0
        else:
            sigmas[j] = float(np.sqrt(variances[best]))
    return NoiseModel(series.feature_names, sigmas, segment_len, starts)


def inject_noise(ds: WindowedDataset, noise: NoiseModel, seed: int) -> WindowedDataset:
    """Add i.i.d. Gaussian draws per cell per feature; targets untouched.

    Zero-sigma features are bit-identical to the input (no arithmetic is
    applied to them), and the full draw tensor is always consumed so the
    result for feature j does not depend on other features' sigmas.
    """
    if noise.feature_names != ds.feature_names:
        raise ValueError(
            f"noise features {noise.feature_names} do not match dataset {ds.feature_names}"
        )
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal(ds.X.shape)
    x = ds.X.copy()
    nz = np.flatnonzero(noise.sigmas > 0)
    if nz.size:
        x[:, :, nz] += draws[:, :, nz] * noise.sigmas[nz]
    return WindowedDataset(
        X=x, y=ds.y, dt=ds.dt, t_end=ds.t_end, feature_names=ds.feature_names
    )


@dataclass(frozen=True)
class EnsembleConfig:
    """Which stochastic sources the N runs sample.

    dropout_p is the inference-time rate (0 disables Monte Carlo dropout);
    training keeps each model's own configured rate. share_noise_realization
    reuses one noise draw across runs instead of fresh draws per run.
    """

    runs: int = 30
    dropout_p: float = 0.2
    inject_train_noise: bool = True
    inject_test_noise: bool = True
    reinitialize_weights: bool = True
    base_seed: int = 0
    share_noise_realization: bool = False

    def __post_init__(self):
        if self.runs < 2:
            raise ValueError("ensemble needs at least 2 runs")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must satisfy 0 <= p < 1, got {self.dropout_p}")


@dataclass
class EnsembleResult:
    """Per-timestep prediction bands and per-run metric spreads (kW units)."""

    t_end: np.ndarray
    mean_instant: np.ndarray
    std_instant: np.ndarray
    mean_cumulative: np.ndarray
    std_cumulative: np.ndarray
    per_run: dict[str, np.ndarray]  # instant_mae/instant_rmse/cum_mae_pct/cum_rmse_pct
    summaries: dict[str, tuple[float, float]]  # metric -> (mean, spread)
    n_runs: int = 0

    def summary_dict(self) -> dict:
        return {
            name: {"mean": float(m), "delta": float(d)}
            for name, (m, d) in sorted(self.summaries.items())
        }


def collapse_aware_std(matrix: np.ndarray, axis: int = 0) -> np.ndarray:
    """Population std that is exactly 0 wherever all members coincide.

    Plain np.std of identical values can return ~1e-16 because the pairwise
    mean is not exact; a degenerate ensemble must collapse to literal zero.
    """
    spread = np.ptp(matrix, axis=axis)
    s = np.std(matrix, axis=axis)
    return np.where(spread == 0.0, 0.0, s)


def _summarize(preds_kw: np.ndarray, y_kw: np.ndarray, t_end: np.ndarray, dt: float) -> EnsembleResult:
    n_runs = preds_kw.shape[0]
    cum_true = accumulate(y_kw, dt)
    cums = np.stack([accumulate(preds_kw[i], dt) for i in range(n_runs)])

    per_run = {
        "instant_mae": np.empty(n_runs),
        "instant_rmse": np.empty(n_runs),
        "cum_mae_pct": np.empty(n_runs),
        "cum_rmse_pct": np.empty(n_runs),
    }
    for i in range(n_runs):
        pair = EvaluationPair(y_kw, preds_kw[i])
        per_run["instant_mae"][i] = mae(pair)
        per_run["instant_rmse"][i] = rmse(pair)
        mae_pct, rmse_pct = cumulative_percent_errors(cum_true, cums[i])
        per_run["cum_mae_pct"][i] = mae_pct
        per_run["cum_rmse_pct"][i] = rmse_pct

    summaries = {
        name: (float(np.mean(vals)), float(collapse_aware_std(vals[:, None], axis=0)[0]))
        for name, vals in per_run.items()
    }
    return EnsembleResult(
        t_end=t_end,
        mean_instant=preds_kw.mean(axis=0),
        std_instant=collapse_aware_std(preds_kw),
        mean_cumulative=cums.mean(axis=0),
        std_cumulative=collapse_aware_std(cums),
        per_run=per_run,
        summaries=summaries,
        n_runs=n_runs,
    )


def monte_carlo_ensemble(
    builder,
    train_ds: WindowedDataset,
    val_ds: WindowedDataset,
    test_ds: WindowedDataset,
    cfg: EnsembleConfig,
    train_cfg: TrainConfig,
    noise: NoiseModel | None = None,
    scaler: ScalerParams | None = None,
    dt: float | None = None,
) -> EnsembleResult:
    """Train-and-predict N times, each run with its own derived seeds.

    builder(seed) must return a fresh untrained model. Training shuffle and
    training-time dropout use one shared stream so that they are not an
    uncontrolled fourth randomness source: with re-init, noise, and
    inference dropout all disabled, every run is bit-identical.
    """
    if (cfg.inject_train_noise or cfg.inject_test_noise) and noise is None:
        raise ValueError("noise injection requested but no NoiseModel given")
    if dt is None:
        dt = test_ds.dt

    root = np.random.SeedSequence(cfg.base_seed)
    children = root.spawn(cfg.runs + 1)
    shared = children[0].generate_state(2)
    fixed_init_seed = int(shared[0])
    shuffle_seed = int(shared[1])
    run_cfg = TrainConfig(
        batch=train_cfg.batch, lr=train_cfg.lr, epochs=train_cfg.epochs, seed=shuffle_seed
    )

    preds = np.empty((cfg.runs, test_ds.n_windows))
    for i in range(cfg.runs):
        state = children[i + 1].generate_state(4)
        init_seed = int(state[0]) if cfg.reinitialize_weights else fixed_init_seed
        noise_train_seed = int(shared[1] ^ 1) if cfg.share_noise_realization else int(state[1])
        noise_test_seed = int(shared[1] ^ 2) if cfg.share_noise_realization else int(state[2])
        dropout_seed = int(state[3])

        model = builder(init_seed)
        tr = train_ds
        if cfg.inject_train_noise:
            tr = inject_noise(train_ds, noise, noise_train_seed)
        te = test_ds
        if cfg.inject_test_noise:
            te = inject_noise(test_ds, noise, noise_test_seed)
        try:
            fitted = train(model, tr, val_ds, run_cfg)
        except Exception as exc:
            raise RuntimeError(f"ensemble run {i} failed during training: {exc}") from exc
        preds[i] = predict(
            fitted.model,
            te,
            mc_dropout=cfg.dropout_p > 0,
            seed=dropout_seed,
            dropout_override=cfg.dropout_p if cfg.dropout_p > 0 else None,
        )

    y = test_ds.y
    if scaler is not None:
        y = invert_target(y, scaler)
        preds = np.stack([invert_target(p, scaler) for p in preds])
    return _summarize(preds, y, test_ds.t_end, dt)


def rf_bootstrap_uncertainty(
    trained: TrainedModel,
    test_ds: WindowedDataset,
    dt: float | None = None,
) -> EnsembleResult:
    """Per-tree spread of a fitted forest, shaped like the DNN ensembles."""
    if trained.kind != "rf":
        raise ValueError(f"expected a random forest, got {trained.kind!r}")
    if dt is None:
        dt = test_ds.dt
    per_tree = rf_per_tree(trained.model, test_ds)
    if per_tree.shape[0] == 1:
        warnings.warn("single-tree forest: bootstrap spread is identically zero", stacklevel=2)
    y = test_ds.y
    if trained.scaler is not None:
        y = invert_target(y, trained.scaler)
        per_tree = np.stack([invert_target(p, trained.scaler) for p in per_tree])
    return _summarize(per_tree, y, test_ds.t_end, dt)


def write_ensemble_csv(result: EnsembleResult, instant_path, cumulative_path) -> None:
    """`t_end_s,mean,std,lower,upper` for the instant and cumulative bands."""
    for path, mean, std in (
        (instant_path, result.mean_instant, result.std_instant),
        (cumulative_path, result.mean_cumulative, result.std_cumulative),
    ):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t_end_s,mean,std,lower,upper\n")
            for t, m, s in zip(result.t_end, mean, std):
                fh.write(
                    f"{t:.7f},{repr(float(m))},{repr(float(s))},"
                    f"{repr(float(m - s))},{repr(float(m + s))}\n"
                )


def write_ensemble_summary(result: EnsembleResult, path, extra: dict | None = None) -> None:
    doc = {
        "n_runs": result.n_runs,
        "summaries": result.summary_dict(),
        "per_run": {k: [float(v) for v in vals] for k, vals in sorted(result.per_run.items())},
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
