"""Feature/target scaling, fixed-length windowing, chronological splits.

The scaler is min-max, fitted on training rows only; targets are scaled with
the same scheme so metrics can be reported in scaled units and inverted back
to physical kW. Windows pair a W-step feature block with the target at the
window's final timestep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import AlignedSeries, ShapeError


@dataclass(frozen=True)
class ScalerParams:
    """Per-column min/max over the training rows. Columns = features + target."""

    columns: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "mins", np.asarray(self.mins, dtype=np.float64))
        object.__setattr__(self, "maxs", np.asarray(self.maxs, dtype=np.float64))
        if self.mins.shape != (len(self.columns),) or self.maxs.shape != (len(self.columns),):
            raise ShapeError(
                f"scaler min/max shapes {self.mins.shape}/{self.maxs.shape} "
                f"vs {len(self.columns)} columns"
            )
        if np.any(self.maxs < self.mins):
            raise ValueError("scaler max < min")

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "mins": [float(v) for v in self.mins],
            "maxs": [float(v) for v in self.maxs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(tuple(d["columns"]), np.asarray(d["mins"]), np.asarray(d["maxs"]))


TARGET_COLUMN = "__target__"


@dataclass(frozen=True)
class WindowedDataset:
    """N windows of W steps by C features, each paired with a scalar target."""

    X: np.ndarray  # shape (N, W, C)
    y: np.ndarray  # shape (N,)
    dt: float  # seconds between consecutive windows' final samples
    t_end: np.ndarray  # shape (N,), timestamp of each window's last row
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))
        object.__setattr__(self, "t_end", np.asarray(self.t_end, dtype=np.float64))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.X.ndim != 3:
            raise ShapeError(f"X must be (N, W, C), got {self.X.shape}")
        n = self.X.shape[0]
        if n < 1:
            raise ValueError("empty dataset")
        if self.y.shape != (n,) or self.t_end.shape != (n,):
            raise ShapeError(
                f"y {self.y.shape} / t_end {self.t_end.shape} vs N={n} windows"
            )
        if not np.all(np.isfinite(self.y)):
            raise ValueError("non-finite target")
        if n > 1 and np.any(np.diff(self.t_end) <= 0):
            raise ValueError("t_end not strictly increasing")

    @property
    def n_windows(self) -> int:
        return self.X.shape[0]

    @property
    def window(self) -> int:
        return self.X.shape[1]

    @property
    def n_features(self) -> int:
        return self.X.shape[2]


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/val/test fractions."""

    fractions: tuple[float, float, float] = (0.70, 0.10, 0.20)

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if len(self.fractions) != 3:
            raise ValueError("need exactly (train, val, test) fractions")
        if any(not 0.0 < f < 1.0 for f in self.fractions):
            raise ValueError(f"fractions must lie in (0, 1): {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1: {self.fractions}")


def fit_minmax(series: AlignedSeries, train_rows: range) -> ScalerParams:
    """Column-wise min/max over the given training rows (features + target)."""
    idx = np.arange(train_rows.start, train_rows.stop, train_rows.step)
    if len(idx) == 0:
        raise ValueError("empty training row range")
    if idx[0] < 0 or idx[-1] >= series.n_rows:
        raise IndexError(f"train rows {train_rows} out of bounds for T={series.n_rows}")
    cols = np.column_stack([series.features[idx], series.target[idx]])
    return ScalerParams(
        columns=series.feature_names + (TARGET_COLUMN,),
        mins=cols.min(axis=0),
        maxs=cols.max(axis=0),
    )


def _column_indices(params: ScalerParams, names: tuple[str, ...]) -> np.ndarray:
    try:
        return np.asarray([params.columns.index(n) for n in names])
    except ValueError:
        missing = [n for n in names if n not in params.columns]
        raise KeyError(f"columns not covered by scaler: {missing}") from None


def scale_columns(x: np.ndarray, names: tuple[str, ...], params: ScalerParams) -> np.ndarray:
    """(x - min) / (max - min) along the last axis; constant columns map to 0.

    Values outside the fitted range pass through unclamped (scaled values
    may leave [0, 1] on test-time extremes).
    """
    idx = _column_indices(params, names)
    lo = params.mins[idx]
    span = params.maxs[idx] - lo
    safe = np.where(span == 0.0, 1.0, span)
    out = (np.asarray(x, dtype=np.float64) - lo) / safe
    return np.where(span == 0.0, 0.0, out)


def unscale_columns(x: np.ndarray, names: tuple[str, ...], params: ScalerParams) -> np.ndarray:
    """Inverse of scale_columns; constant columns recover their fitted value."""
    idx = _column_indices(params, names)
    lo = params.mins[idx]
    span = params.maxs[idx] - lo
    return np.asarray(x, dtype=np.float64) * span + lo


def apply_minmax(series: AlignedSeries, params: ScalerParams) -> AlignedSeries:
    """Scale a whole series (features and target) into scaler units."""
    feats = scale_columns(series.features, series.feature_names, params)
    targ = scale_columns(series.target[:, None], (TARGET_COLUMN,), params)[:, 0]
    return AlignedSeries(
        timestamps=series.timestamps,
        dt=series.dt,
        features=feats,
        feature_names=series.feature_names,
        target=targ,
    )


def invert_minmax(series: AlignedSeries, params: ScalerParams) -> AlignedSeries:
    feats = unscale_columns(series.features, series.feature_names, params)
    targ = unscale_columns(series.target[:, None], (TARGET_COLUMN,), params)[:, 0]
    return AlignedSeries(
        timestamps=series.timestamps,
        dt=series.dt,
        features=feats,
        feature_names=series.feature_names,
        target=targ,
    )


def invert_target(y_scaled: np.ndarray, params: ScalerParams) -> np.ndarray:
    """Scaled predictions back to physical kW."""
    return unscale_columns(np.asarray(y_scaled)[:, None], (TARGET_COLUMN,), params)[:, 0]


def make_windows(series: AlignedSeries, window: int, stride: int = 1) -> WindowedDataset:
    """Slice the series into N = floor((T - W)/stride) + 1 windows.

    Window k covers rows [k*stride, k*stride + W); its target is the series
    target at the window's final row. stride=1 maximizes training pairs,
    stride=W gives non-overlapping windows.
    """
    t = series.n_rows
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if window > t:
        raise ValueError(f"window {window} exceeds series length {t}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n = (t - window) // stride + 1
    starts = np.arange(n) * stride
    ends = starts + window - 1
    x = np.stack([series.features[s : s + window] for s in starts])
    return WindowedDataset(
        X=x,
        y=series.target[ends],
        dt=series.dt * stride,
        t_end=series.timestamps[ends],
        feature_names=series.feature_names,
    )


def train_row_count(n_train_windows: int, window: int, stride: int) -> int:
    """Rows covered by the first `n_train_windows` windows (scaler-fit prefix)."""
    if n_train_windows < 1:
        raise ValueError("need at least one training window")
    return (n_train_windows - 1) * stride + window


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """Round-half-up train then val; test takes the remainder."""
    f_tr, f_val, _ = spec.fractions
    n_tr = int(np.floor(n * f_tr + 0.5))
    n_val = int(np.floor(n * f_val + 0.5))
    n_te = n - n_tr - n_val
    if min(n_tr, n_val, n_te) < 1:
        raise ValueError(
            f"split of {n} windows by {spec.fractions} leaves an empty part: "
            f"{(n_tr, n_val, n_te)}"
        )
    return n_tr, n_val, n_te


def _subset(ds: WindowedDataset, lo: int, hi: int) -> WindowedDataset:
    return WindowedDataset(
        X=ds.X[lo:hi],
        y=ds.y[lo:hi],
        dt=ds.dt,
        t_end=ds.t_end[lo:hi],
        feature_names=ds.feature_names,
    )


def chrono_split(
    ds: WindowedDataset, spec: SplitSpec | None = None
) -> tuple[WindowedDataset, WindowedDataset, WindowedDataset]:
    """Contiguous prefix/middle/suffix split in window order (no shuffling)."""
    spec = spec or SplitSpec()
    if ds.n_windows < 3:
        raise ValueError(f"need at least 3 windows to split, got {ds.n_windows}")
    n_tr, n_val, _ = split_sizes(ds.n_windows, spec)
    return (
        _subset(ds, 0, n_tr),
        _subset(ds, n_tr, n_tr + n_val),
        _subset(ds, n_tr + n_val, ds.n_windows),
    )


def build_datasets(
    series: AlignedSeries,
    window: int,
    stride: int = 1,
    spec: SplitSpec | None = None,
) -> tuple[ScalerParams, WindowedDataset, WindowedDataset, WindowedDataset]:
    """Scale, window, and split a series without train/test leakage.

    The scaler is fitted on exactly the rows covered by training windows,
    then applied everywhere before windowing.
    """
    spec = spec or SplitSpec()
    n = (series.n_rows - window) // stride + 1
    n_tr, _, _ = split_sizes(n, spec)
    scaler = fit_minmax(series, range(0, train_row_count(n_tr, window, stride)))
    scaled = apply_minmax(series, scaler)
    windows = make_windows(scaled, window, stride)
    train, val, test = chrono_split(windows, spec)
    return scaler, train, val, test


def save_windowed(ds: WindowedDataset, x_path, y_path, scaler: ScalerParams | None = None, scaler_path=None) -> None:
    """Persist as a CSV pair plus optional scaler sidecar.

    X is flattened row-major: one line per (window, step) with the feature
    vector; y carries each window's end timestamp and target.
    """
    names = ds.feature_names or tuple(f"f{i}" for i in range(ds.n_features))
    with open(x_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["window", "step", *names]) + "\n")
        for k in range(ds.n_windows):
            for s in range(ds.window):
                cells = [str(k), str(s)] + [repr(float(v)) for v in ds.X[k, s]]
                fh.write(",".join(cells) + "\n")
    with open(y_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("window,t_end_s,target\n")
        for k in range(ds.n_windows):
            fh.write(f"{k},{ds.t_end[k]:.7f},{repr(float(ds.y[k]))}\n")
    if scaler is not None:
        if scaler_path is None:
            raise ValueError("scaler given without scaler_path")
        with open(scaler_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(scaler.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_windowed(x_path, y_path, dt: float | None = None) -> WindowedDataset:
    """Inverse of save_windowed; dt falls back to the median t_end spacing."""
    with open(x_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        names = tuple(header[2:])
        rows = [line.strip().split(",") for line in fh if line.strip()]
    with open(y_path, "r", encoding="utf-8") as fh:
        fh.readline()
        yrows = [line.strip().split(",") for line in fh if line.strip()]
    n = len(yrows)
    w = len(rows) // n if n else 0
    if n * w != len(rows):
        raise ValueError(f"{len(rows)} X rows not divisible by {n} windows")
    x = np.asarray([[float(v) for v in r[2:]] for r in rows]).reshape(n, w, len(names))
    y = np.asarray([float(r[2]) for r in yrows])
    t_end = np.asarray([float(r[1]) for r in yrows])
    if dt is None:
        dt = float(np.median(np.diff(t_end))) if n > 1 else 1.0
    return WindowedDataset(X=x, y=y, dt=dt, t_end=t_end, feature_names=names)
