"""Domain types for powertrain telemetry and validated access to them.

Everything downstream (ingest, preprocessing, models, reports) speaks the
vocabulary defined here: raw multi-rate logs (`DriveLog`) and uniformly
indexed feature matrices (`AlignedSeries`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# Timestamps are real seconds since log start, kept at 1e-7 s resolution
# (7 fractional digits) by rounding at parse/generation time.
TIME_RESOLUTION = 1e-7
TIME_DECIMALS = 7


class PowertrainKind(enum.Enum):
    ICE = "ice"
    EV = "ev"
    HEV = "hev"

    @classmethod
    def parse(cls, text: str) -> "PowertrainKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown powertrain kind: {text!r}") from None


# Channel vocabulary: name -> expected unit.
CHANNEL_UNITS = {
    "speed": "km/h",
    "acceleration": "m/s²",
    "engine_torque": "N·m",
    "motor_torque": "N·m",
    "engine_rpm": "RPM",
    "motor_rpm": "RPM",
    "fuel_power": "kW",
    "electric_power": "kW",
    "soc": "V",
    "battery_voltage": "V",
    "battery_current": "A",
}

# Admissible model-input channels per powertrain kind. HEV carries both
# engine-side channels and motor RPM, but not motor torque.
ADMISSIBLE_FEATURES = {
    PowertrainKind.ICE: ("speed", "acceleration", "engine_torque", "engine_rpm"),
    PowertrainKind.EV: ("speed", "acceleration", "motor_torque", "motor_rpm"),
    PowertrainKind.HEV: (
        "speed",
        "acceleration",
        "engine_torque",
        "engine_rpm",
        "motor_rpm",
    ),
}

# Instantaneous power targets per kind; HEV predicts the sum of both.
TARGET_CHANNELS = {
    PowertrainKind.ICE: ("fuel_power",),
    PowertrainKind.EV: ("electric_power",),
    PowertrainKind.HEV: ("fuel_power", "electric_power"),
}

# Recorded for comparison only, never admissible as model features.
COMPARISON_CHANNELS = {
    PowertrainKind.ICE: (),
    PowertrainKind.EV: ("soc", "battery_voltage", "battery_current"),
    PowertrainKind.HEV: ("soc", "battery_voltage", "battery_current"),
}


def known_channels(kind: PowertrainKind) -> tuple[str, ...]:
    """All channel names expected in a log of the given kind."""
    return (
        ADMISSIBLE_FEATURES[kind]
        + TARGET_CHANNELS[kind]
        + COMPARISON_CHANNELS[kind]
    )


class EmptySliceError(ValueError):
    """A time-range slice selected no rows."""


class EmptyAlignmentError(ValueError):
    """Synchronization dropped every row."""


class NumericError(ArithmeticError):
    """A numeric operation produced NaN/Inf or diverged."""


class ShapeError(ValueError):
    """Incompatible array shapes; message names both."""


class ParseError(ValueError):
    """Malformed input file; message carries the line number."""


@dataclass(frozen=True)
class Channel:
    """One telemetry signal: strictly increasing timestamps plus values."""

    name: str
    unit: str
    timestamps: np.ndarray  # seconds, strictly increasing
    values: np.ndarray  # same length as timestamps

    def __post_init__(self):
        object.__setattr__(
            self, "timestamps", np.asarray(self.timestamps, dtype=np.float64)
        )
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class DriveLog:
    """Raw multi-rate log: one Channel per signal plus string metadata."""

    kind: PowertrainKind
    channels: dict[str, Channel]
    meta: dict[str, str] = field(default_factory=dict)

    def target_names(self) -> tuple[str, ...]:
        return TARGET_CHANNELS[self.kind]


@dataclass(frozen=True)
class AlignedSeries:
    """Uniformly indexed feature matrix after synchronization.

    `dt` is the median inter-sample period of `timestamps` and is the
    time step used when integrating instantaneous power.
    """

    timestamps: np.ndarray  # shape (T,)
    dt: float
    features: np.ndarray  # shape (T, C)
    feature_names: tuple[str, ...]
    target: np.ndarray  # shape (T,), instantaneous power in kW

    def __post_init__(self):
        object.__setattr__(
            self, "timestamps", np.asarray(self.timestamps, dtype=np.float64)
        )
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        t = len(self.timestamps)
        if t < 1:
            raise ValueError("AlignedSeries needs at least one row")
        if self.features.shape != (t, len(self.feature_names)):
            raise ShapeError(
                f"features shape {self.features.shape} vs "
                f"({t}, {len(self.feature_names)}) from timestamps/names"
            )
        if self.target.shape != (t,):
            raise ShapeError(f"target shape {self.target.shape} vs ({t},)")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("duplicate feature names")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)


def median_dt(timestamps: np.ndarray, fallback: float | None = None) -> float:
    """Median inter-sample period; `fallback` covers single-row series."""
    if len(timestamps) >= 2:
        return float(np.median(np.diff(timestamps)))
    if fallback is None:
        raise ValueError("cannot infer dt from fewer than two timestamps")
    return fallback


def validate_log(log: DriveLog) -> list[str]:
    """Check every DriveLog invariant; returns violations, empty if clean.

    Violations are data, not failures: each entry names the channel and the
    broken rule so callers can report them all at once.
    """
    violations = []
    for name, ch in sorted(log.channels.items()):
        if name != ch.name:
            violations.append(f"{name}: channel key does not match name {ch.name!r}")
        if len(ch) == 0:
            violations.append(f"{name}: empty channel")
            continue
        if len(ch.timestamps) != len(ch.values):
            violations.append(
                f"{name}: {len(ch.timestamps)} timestamps vs {len(ch.values)} values"
            )
        if np.any(np.diff(ch.timestamps) <= 0):
            violations.append(f"{name}: non-increasing timestamp")
        if not np.all(np.isfinite(ch.values)):
            violations.append(f"{name}: non-finite value")
        if not np.all(np.isfinite(ch.timestamps)):
            violations.append(f"{name}: non-finite timestamp")
        if name in CHANNEL_UNITS and ch.unit != CHANNEL_UNITS[name]:
            violations.append(
                f"{name}: unexpected unit {ch.unit!r}, expected {CHANNEL_UNITS[name]!r}"
            )
    for name in ADMISSIBLE_FEATURES[log.kind]:
        if name not in log.channels:
            violations.append(f"{name}: missing admissible channel")
    if not any(t in log.channels for t in log.target_names()):
        violations.append(
            f"target: no target channel present (need one of {log.target_names()})"
        )
    return violations


def validate_series(series: AlignedSeries) -> list[str]:
    """Invariant checks applied to every AlignedSeries the system produces."""
    violations = []
    if np.any(np.diff(series.timestamps) <= 0):
        violations.append("timestamps: non-increasing")
    if not np.all(np.isfinite(series.features)):
        violations.append("features: non-finite value")
    if not np.all(np.isfinite(series.target)):
        violations.append("target: non-finite value")
    return violations


def slice_time_range(series: AlignedSeries, t0: float, t1: float) -> AlignedSeries:
    """Rows with t0 <= timestamp < t1; dt recomputed from the survivors."""
    if not t0 < t1:
        raise ValueError(f"need t0 < t1, got [{t0}, {t1})")
    mask = (series.timestamps >= t0) & (series.timestamps < t1)
    if not mask.any():
        raise EmptySliceError(f"no rows in [{t0}, {t1})")
    ts = series.timestamps[mask]
    return AlignedSeries(
        timestamps=ts,
        dt=median_dt(ts, fallback=series.dt),
        features=series.features[mask],
        feature_names=series.feature_names,
        target=series.target[mask],
    )


def select_features(series: AlignedSeries, names: list[str] | tuple[str, ...]) -> AlignedSeries:
    """Project the series onto a feature subset, preserving column order of `names`."""
    missing = [n for n in names if n not in series.feature_names]
    if missing:
        raise KeyError(f"features not in series: {missing}")
    idx = [series.feature_names.index(n) for n in names]
    return AlignedSeries(
        timestamps=series.timestamps,
        dt=series.dt,
        features=series.features[:, idx],
        feature_names=tuple(names),
        target=series.target,
    )


def round_timestamp(t: float) -> float:
    """Snap to the 1e-7 s grid used throughout."""
    return round(float(t), TIME_DECIMALS)


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NumericError(f"{what}: {bad} non-finite value(s)")


def admissible_feature_set(kind: PowertrainKind, names: list[str] | tuple[str, ...]) -> list[str]:
    """Names in `names` that are not admissible features for `kind`."""
    allowed = set(ADMISSIBLE_FEATURES[kind])
    return [n for n in names if n not in allowed]


def isclose_times(a: float, b: float) -> bool:
    return math.isclose(a, b, abs_tol=TIME_RESOLUTION / 2)
