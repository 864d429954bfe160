"""Shared fixtures: tiny hand-built series and cached synthetic cycles."""

import numpy as np
import pytest

from powertrace.core import (
    AlignedSeries,
    Channel,
    DriveLog,
    PowertrainKind,
    select_features,
)
from powertrace.ingest import synchronize
from powertrace.preprocess import build_datasets
from powertrace.synthgen import generate_cycle, preset_spec


def make_channel(name, unit, timestamps, values):
    return Channel(name=name, unit=unit,
                   timestamps=np.asarray(timestamps, dtype=float),
                   values=np.asarray(values, dtype=float))


def make_ice_log(n=20, rate=2.0):
    """Well-formed single-rate ICE log with all admissible channels."""
    t = np.arange(n) / rate
    rng = np.random.default_rng(0)
    return DriveLog(
        kind=PowertrainKind.ICE,
        channels={
            "speed": make_channel("speed", "km/h", t, 30 + 5 * np.sin(t)),
            "acceleration": make_channel("acceleration", "m/s²", t, 0.5 * np.cos(t)),
            "engine_torque": make_channel("engine_torque", "N·m", t, 50 + rng.normal(0, 1, n)),
            "engine_rpm": make_channel("engine_rpm", "RPM", t, 1500 + 100 * np.sin(t / 2)),
            "fuel_power": make_channel("fuel_power", "kW", t, 10 + 2 * np.sin(t)),
        },
        meta={},
    )


def make_series(n=30, n_features=2, seed=0, dt=1.0):
    rng = np.random.default_rng(seed)
    return AlignedSeries(
        timestamps=np.arange(n) * dt,
        dt=dt,
        features=rng.normal(size=(n, n_features)),
        feature_names=tuple(f"f{i}" for i in range(n_features)),
        target=rng.normal(size=n),
    )


@pytest.fixture(scope="session")
def ice_cycle():
    """30-minute mixed-route ICE cycle at 2 Hz (the acceptance-scale fixture)."""
    spec = preset_spec(PowertrainKind.ICE, "mixed-route", duration_s=1800.0, rate_hz=2.0, seed=11)
    return generate_cycle(spec)


@pytest.fixture(scope="session")
def ice_series(ice_cycle):
    log, _ = ice_cycle
    return select_features(synchronize(log), ["speed", "engine_torque", "engine_rpm"])


@pytest.fixture(scope="session")
def ev_cycle():
    spec = preset_spec(PowertrainKind.EV, "mixed-route", duration_s=1200.0, rate_hz=2.0, seed=3)
    return generate_cycle(spec)


@pytest.fixture(scope="session")
def ev_series(ev_cycle):
    log, _ = ev_cycle
    return select_features(
        synchronize(log), ["speed", "acceleration", "motor_torque", "motor_rpm"]
    )


@pytest.fixture(scope="session")
def small_ice_datasets(ice_series):
    """Short slice of the ICE cycle windowed for fast model tests."""
    from powertrace.core import slice_time_range

    short = slice_time_range(ice_series, 0.0, 400.0)
    return build_datasets(short, window=8, stride=1)
