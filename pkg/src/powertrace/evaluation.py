"""Instantaneous and cumulative power metrics plus structured run reports.

Cumulative power is the discrete time integral of the instantaneous series
(prefix sum times the sampling period), reported in kW·s. Percentage errors
on the cumulative series normalize by the mean absolute actual value over
the horizon, which stays finite through regenerative zero crossings.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .core import NumericError, ShapeError
from .models.training import TrainedModel, count_parameters, estimate_flops
from .preprocess import WindowedDataset, invert_target

UNDEFINED_NORMALIZER = 1e-9


@dataclass(frozen=True)
class PowerSeries:
    """An instantaneous power trace and its running integral."""

    t: np.ndarray
    p_instant: np.ndarray  # kW
    p_cumulative: np.ndarray  # kW·s
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64))
        object.__setattr__(self, "p_instant", np.asarray(self.p_instant, dtype=np.float64))
        object.__setattr__(self, "p_cumulative", np.asarray(self.p_cumulative, dtype=np.float64))

    @property
    def n(self) -> int:
        return len(self.p_instant)


@dataclass(frozen=True)
class EvaluationPair:
    """Actual vs predicted vectors in one unit system."""

    y: np.ndarray
    y_hat: np.ndarray
    units: str = "kW"  # "scaled" or "kW"

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))
        object.__setattr__(self, "y_hat", np.asarray(self.y_hat, dtype=np.float64))
        if self.y.shape != self.y_hat.shape or self.y.ndim != 1 or len(self.y) < 1:
            raise ShapeError(
                f"pair needs equal-length nonempty vectors, got {self.y.shape} vs {self.y_hat.shape}"
            )


def mae(pair: EvaluationPair) -> float:
    return float(np.mean(np.abs(pair.y - pair.y_hat)))


def rmse(pair: EvaluationPair) -> float:
    return float(np.sqrt(np.mean((pair.y - pair.y_hat) ** 2)))


def accumulate(p_instant: np.ndarray, dt: float) -> np.ndarray:
    """out[k] = sum_{i<=k} p_instant[i] * dt."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return np.cumsum(np.asarray(p_instant, dtype=np.float64)) * dt


def accumulate_per_step(p_instant: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Integration with per-sample intervals for irregular logs.

    out[k] = sum_{i<=k} p[i] * dt_i with dt_i = t_i - t_{i-1}; the unknown
    first interval borrows the first difference (single samples need the
    fixed-dt path instead).
    """
    p = np.asarray(p_instant, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"power {p.shape} vs timestamps {t.shape}")
    if len(t) < 2:
        raise ValueError("per-step accumulation needs at least 2 samples")
    diffs = np.diff(t)
    if np.any(diffs <= 0):
        raise ValueError("timestamps must be strictly increasing")
    dts = np.concatenate([[diffs[0]], diffs])
    return np.cumsum(p * dts)


def cumulative_percent_errors(cum_true: np.ndarray, cum_pred: np.ndarray) -> tuple[float, float]:
    """(MAE%, RMSE%) of the cumulative series, normalized by mean |actual|."""
    pair = EvaluationPair(cum_true, cum_pred)
    norm = float(np.mean(np.abs(pair.y)))
    if norm < UNDEFINED_NORMALIZER:
        raise NumericError(
            f"cumulative percent error undefined: mean |actual| = {norm} is near zero"
        )
    return 100.0 * mae(pair) / norm, 100.0 * rmse(pair) / norm


def final_value_relative_error(cum_true: np.ndarray, cum_pred: np.ndarray) -> float:
    """|pred - true| / |true| at the last sample; inf if the final true value is ~0.

    Auxiliary metric only: regenerative cycles can park the final value near
    zero, which is exactly why the headline metrics normalize by the mean.
    """
    denom = abs(float(cum_true[-1]))
    if denom < UNDEFINED_NORMALIZER:
        return float("inf")
    return abs(float(cum_pred[-1]) - float(cum_true[-1])) / denom


@dataclass
class Report:
    """One experiment's metrics block, JSON-serializable."""

    vehicle: str
    feature_set: list[str]
    model_kind: str
    instant_mae_scaled: float
    instant_rmse_scaled: float
    instant_mae_kw: float
    instant_rmse_kw: float
    cumulative_mae_pct: float
    cumulative_rmse_pct: float
    final_value_rel_err: float
    # Measured wall time. Persisted artifacts null this out so re-runs stay
    # byte-identical; the CLI writes measurements to a timing sidecar instead.
    runtime_s: float | None
    parameter_count: int
    flops: int
    seed: int
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "vehicle": self.vehicle,
            "feature_set": list(self.feature_set),
            "model_kind": self.model_kind,
            "instant_mae_scaled": self.instant_mae_scaled,
            "instant_rmse_scaled": self.instant_rmse_scaled,
            "instant_mae_kw": self.instant_mae_kw,
            "instant_rmse_kw": self.instant_rmse_kw,
            "cumulative_mae_pct": self.cumulative_mae_pct,
            "cumulative_rmse_pct": self.cumulative_rmse_pct,
            "final_value_rel_err": self.final_value_rel_err,
            "runtime_s": self.runtime_s,
            "parameter_count": self.parameter_count,
            "flops": self.flops,
            "seed": self.seed,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Report":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def predicted_series(
    trained: TrainedModel, test: WindowedDataset, dt: float | None = None
) -> tuple[PowerSeries, PowerSeries]:
    """(actual, predicted) kW PowerSeries for a test split."""
    if dt is None:
        dt = test.dt
    pred_scaled = trained.predict(test)
    if trained.scaler is None:
        raise ValueError("model has no scaler; cannot report physical units")
    y_kw = invert_target(test.y, trained.scaler)
    pred_kw = invert_target(pred_scaled, trained.scaler)
    actual = PowerSeries(test.t_end, y_kw, accumulate(y_kw, dt), dt)
    predicted = PowerSeries(test.t_end, pred_kw, accumulate(pred_kw, dt), dt)
    return actual, predicted


def evaluate_run(
    trained: TrainedModel,
    test: WindowedDataset,
    dt: float | None = None,
    vehicle: str = "unknown",
    runtime_s: float | None = None,
    notes: dict | None = None,
    per_step_dt: bool = False,
) -> Report:
    """Predict the test split and fill a Report in both unit systems.

    per_step_dt integrates with each sample's own interval instead of the
    fixed median period (for irregular logs).
    """
    if dt is None:
        dt = test.dt
    start = time.perf_counter()
    pred_scaled = trained.predict(test)
    elapsed = time.perf_counter() - start
    scaled = EvaluationPair(test.y, pred_scaled, units="scaled")

    y_kw = invert_target(test.y, trained.scaler) if trained.scaler else test.y
    pred_kw = invert_target(pred_scaled, trained.scaler) if trained.scaler else pred_scaled
    physical = EvaluationPair(y_kw, pred_kw, units="kW")

    if per_step_dt:
        cum_true = accumulate_per_step(y_kw, test.t_end)
        cum_pred = accumulate_per_step(pred_kw, test.t_end)
    else:
        cum_true = accumulate(y_kw, dt)
        cum_pred = accumulate(pred_kw, dt)
    mae_pct, rmse_pct = cumulative_percent_errors(cum_true, cum_pred)

    all_notes = dict(notes or {})
    if per_step_dt:
        all_notes.setdefault("integration", "per-step dt")
    if trained.kind == "transformer":
        all_notes.setdefault(
            "parameter_count_note",
            "exact count of the built architecture; no external anchor",
        )
    return Report(
        vehicle=vehicle,
        feature_set=list(test.feature_names),
        model_kind=trained.kind,
        instant_mae_scaled=mae(scaled),
        instant_rmse_scaled=rmse(scaled),
        instant_mae_kw=mae(physical),
        instant_rmse_kw=rmse(physical),
        cumulative_mae_pct=mae_pct,
        cumulative_rmse_pct=rmse_pct,
        final_value_rel_err=final_value_relative_error(cum_true, cum_pred),
        runtime_s=runtime_s if runtime_s is not None else elapsed,
        parameter_count=count_parameters(trained),
        flops=estimate_flops(trained, test.window),
        seed=trained.seed,
        notes=all_notes,
    )
