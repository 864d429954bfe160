"""Deterministic synthetic drive cycles with analytic ground-truth power.

Stands in for private road data: speed follows smooth ramps through the
requested phases, torque/RPM channels derive from a frozen single-track
model, and each powertrain kind has a closed-form oracle power. Channels get
seeded sensor noise; the clean oracle power ships as a separate sidecar that
is never fed to models.

All vehicle coefficients below are arbitrary but frozen so expected values
in tests stay stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Channel,
    DriveLog,
    PowertrainKind,
    round_timestamp,
)

# frozen vehicle model coefficients
MASS_KG = 1500.0
WHEEL_RADIUS_M = 0.30
ROLLING_FORCE_N = 150.0
AERO_COEF = 0.4  # N per (m/s)^2
TORQUE_CAP_NM = 250.0
ACCEL_CAP_MS2 = 3.0
IDLE_KW = 1.5
IDLE_RPM = 800.0
ETA_DRIVE = 0.9
ETA_REGEN = 0.6
EV_REDUCTION = 9.0  # motor rpm per wheel rpm
ICE_GEAR_RATIOS = (12.0, 8.0, 6.0, 4.5, 3.5)
ICE_UPSHIFT_KMH = (15.0, 30.0, 50.0, 75.0)
HEV_ENGINE_ON_KMH = 45.0  # switch threshold 40 with +-5 hysteresis
HEV_ENGINE_OFF_KMH = 35.0
HEV_BATTERY_CAPACITY_KWS = 18000.0
HEV_BATTERY_LOW = 0.25
HEV_BATTERY_RECOVERED = 0.45
HEV_CHARGE_KW = 2.0

DEFAULT_NOISE_FLOOR = {
    "speed": 0.1,
    "acceleration": 0.02,
    "engine_torque": 0.5,
    "motor_torque": 0.5,
    "engine_rpm": 5.0,
    "motor_rpm": 5.0,
    "fuel_power": 0.05,
    "electric_power": 0.05,
    "soc": 0.01,
    "battery_voltage": 0.1,
    "battery_current": 0.1,
}


@dataclass(frozen=True)
class Phase:
    kind: str  # cruise | accel | brake | stop
    duration: float  # seconds
    target_speed: float | None = None  # km/h

    def __post_init__(self):
        if self.kind not in ("cruise", "accel", "brake", "stop"):
            raise ValueError(f"unknown phase kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("phase duration must be positive")
        if self.target_speed is not None and self.target_speed < 0:
            raise ValueError("target speed must be >= 0")


@dataclass(frozen=True)
class DriveCycleSpec:
    kind: PowertrainKind
    phases: tuple[Phase, ...]
    rate_hz: float = 2.0
    noise_floor: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    duration_s: float | None = None  # validated against the phase sum if given

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise ValueError("need at least one phase")
        if not self.rate_hz > 0:
            raise ValueError("rate must be positive")
        total = sum(p.duration for p in self.phases)
        if self.duration_s is not None and abs(self.duration_s - total) > 1.0 / self.rate_hz:
            raise ValueError(
                f"duration_s={self.duration_s} does not match phase sum {total}"
            )

    @property
    def total_duration(self) -> float:
        return sum(p.duration for p in self.phases)


@dataclass(frozen=True)
class OracleTruth:
    """Clean total power, kept out of the training data."""

    timestamps: np.ndarray
    power_kw: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("timestamp_s,power_kw_true\n")
            for t, p in zip(self.timestamps, self.power_kw):
                fh.write(f"{t:.7f},{repr(float(p))}\n")


def _speed_profile(spec: DriveCycleSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(timestamps, speed km/h, accel m/s2) on the base-rate grid.

    Ramps use a smoothstep so acceleration is continuous and zero at phase
    boundaries; peak ramp acceleration is 1.5*dv/dT, checked against the cap.
    """
    dt = 1.0 / spec.rate_hz
    n = int(round(spec.total_duration * spec.rate_hz))
    ts = np.array([round_timestamp(k * dt) for k in range(n)])
    speed = np.empty(n)
    accel = np.empty(n)

    v0 = 0.0
    t0 = 0.0
    for phase in spec.phases:
        lo = int(round(t0 * spec.rate_hz))
        hi = min(int(round((t0 + phase.duration) * spec.rate_hz)), n)
        idx = np.arange(lo, hi)
        if phase.kind in ("cruise", "stop"):
            hold = 0.0 if phase.kind == "stop" else v0
            if phase.kind == "stop" and abs(v0) > 1e-9:
                raise ValueError("stop phase requires zero entry speed; brake first")
            if phase.kind == "cruise" and phase.target_speed is not None and abs(
                phase.target_speed - v0
            ) > 1e-9:
                raise ValueError(
                    f"cruise target {phase.target_speed} differs from entry speed {v0}"
                )
            speed[idx] = hold
            accel[idx] = 0.0
            v1 = hold
        else:
            if phase.target_speed is None:
                raise ValueError(f"{phase.kind} phase needs a target speed")
            v1 = phase.target_speed
            if phase.kind == "accel" and v1 < v0:
                raise ValueError(f"accel phase target {v1} below entry speed {v0}")
            if phase.kind == "brake" and v1 > v0:
                raise ValueError(f"brake phase target {v1} above entry speed {v0}")
            dv_ms = (v1 - v0) / 3.6
            peak = 1.5 * abs(dv_ms) / phase.duration
            if peak > ACCEL_CAP_MS2:
                raise ValueError(
                    f"infeasible phase: needs {peak:.2f} m/s^2, cap is {ACCEL_CAP_MS2}"
                )
            tau = (ts[idx] - t0) / phase.duration
            speed[idx] = v0 + (v1 - v0) * (3 * tau**2 - 2 * tau**3)
            accel[idx] = dv_ms * 6.0 * tau * (1.0 - tau) / phase.duration
        v0 = v1
        t0 += phase.duration
    return ts, speed, accel


def _traction_force(speed_kmh: np.ndarray, accel_ms2: np.ndarray) -> np.ndarray:
    v_ms = speed_kmh / 3.6
    moving = speed_kmh > 1e-9
    return MASS_KG * accel_ms2 + moving * (ROLLING_FORCE_N + AERO_COEF * v_ms**2)


def _wheel_rpm(speed_kmh: np.ndarray) -> np.ndarray:
    v_ms = speed_kmh / 3.6
    return v_ms / (2.0 * math.pi * WHEEL_RADIUS_M) * 60.0


def _ice_gear_ratio(speed_kmh: np.ndarray) -> np.ndarray:
    gear = np.digitize(speed_kmh, ICE_UPSHIFT_KMH)
    return np.asarray(ICE_GEAR_RATIOS)[gear]


def _rpm_to_rad(rpm: np.ndarray) -> np.ndarray:
    return rpm * 2.0 * math.pi / 60.0


def ice_oracle(speed_kmh: np.ndarray, accel_ms2: np.ndarray):
    """(fuel power kW, engine torque, engine rpm). Power is idle-floored."""
    ratio = _ice_gear_ratio(speed_kmh)
    rpm = np.maximum(_wheel_rpm(speed_kmh) * ratio, IDLE_RPM)
    wheel_torque = _traction_force(speed_kmh, accel_ms2) * WHEEL_RADIUS_M
    torque = np.clip(np.maximum(wheel_torque / ratio, 0.0), 0.0, TORQUE_CAP_NM)
    power = IDLE_KW + torque * _rpm_to_rad(rpm) / 1000.0
    return power, torque, rpm


def ev_oracle(speed_kmh: np.ndarray, accel_ms2: np.ndarray):
    """(electric power kW, motor torque, motor rpm); regen is negative."""
    rpm = _wheel_rpm(speed_kmh) * EV_REDUCTION
    wheel_torque = _traction_force(speed_kmh, accel_ms2) * WHEEL_RADIUS_M
    torque = np.clip(wheel_torque / EV_REDUCTION, -TORQUE_CAP_NM, TORQUE_CAP_NM)
    mech = torque * _rpm_to_rad(rpm) / 1000.0
    power = np.where(mech >= 0.0, mech * ETA_DRIVE, mech * ETA_REGEN)
    return power, torque, rpm


def hev_oracle(speed_kmh: np.ndarray, accel_ms2: np.ndarray, dt: float):
    """Mode-switched engine/motor blend with speed hysteresis and a battery proxy.

    Returns (fuel power, electric power, engine torque, engine rpm,
    motor rpm, battery fraction). The engine carries traction above the
    switch band or when the battery proxy runs low; the motor carries it
    otherwise and always takes regenerative braking.
    """
    n = len(speed_kmh)
    ratio = _ice_gear_ratio(speed_kmh)
    wheel_rpm = _wheel_rpm(speed_kmh)
    wheel_torque = _traction_force(speed_kmh, accel_ms2) * WHEEL_RADIUS_M

    fuel = np.empty(n)
    elec = np.empty(n)
    e_torque = np.empty(n)
    e_rpm = np.empty(n)
    m_rpm = wheel_rpm * EV_REDUCTION
    battery = np.empty(n)

    engine_on = False
    forced_on = False
    b = 0.6
    for i in range(n):
        v = speed_kmh[i]
        if v > HEV_ENGINE_ON_KMH:
            engine_on = True
        elif v < HEV_ENGINE_OFF_KMH:
            engine_on = False
        if b < HEV_BATTERY_LOW:
            forced_on = True
        elif b > HEV_BATTERY_RECOVERED:
            forced_on = False
        on = engine_on or forced_on

        motor_torque = np.clip(wheel_torque[i] / EV_REDUCTION, -TORQUE_CAP_NM, TORQUE_CAP_NM)
        mech_motor = motor_torque * _rpm_to_rad(m_rpm[i]) / 1000.0
        if on:
            e_rpm[i] = max(wheel_rpm[i] * ratio[i], IDLE_RPM)
            tq = np.clip(max(wheel_torque[i] / ratio[i], 0.0), 0.0, TORQUE_CAP_NM)
            e_torque[i] = tq
            fuel[i] = IDLE_KW + tq * _rpm_to_rad(e_rpm[i]) / 1000.0
            elec[i] = min(mech_motor, 0.0) * ETA_REGEN  # motor only regenerates
            b = min(1.0, b - elec[i] * dt / HEV_BATTERY_CAPACITY_KWS
                    + HEV_CHARGE_KW * dt / HEV_BATTERY_CAPACITY_KWS)
        else:
            e_rpm[i] = 0.0
            e_torque[i] = 0.0
            fuel[i] = 0.0
            elec[i] = mech_motor * (ETA_DRIVE if mech_motor >= 0 else ETA_REGEN)
            b = min(1.0, max(0.0, b - elec[i] * dt / HEV_BATTERY_CAPACITY_KWS))
        battery[i] = b
    return fuel, elec, e_torque, e_rpm, m_rpm, battery


def generate_cycle(spec: DriveCycleSpec) -> tuple[DriveLog, OracleTruth]:
    """A kinematically consistent DriveLog plus the clean oracle power."""
    ts, speed, accel = _speed_profile(spec)
    dt = 1.0 / spec.rate_hz
    signals: dict[str, np.ndarray] = {"speed": speed, "acceleration": accel}

    kind = spec.kind
    if kind == PowertrainKind.ICE:
        power, torque, rpm = ice_oracle(speed, accel)
        signals["engine_torque"] = torque
        signals["engine_rpm"] = rpm
        signals["fuel_power"] = power
        oracle_total = power
    elif kind == PowertrainKind.EV:
        power, torque, rpm = ev_oracle(speed, accel)
        signals["motor_torque"] = torque
        signals["motor_rpm"] = rpm
        signals["electric_power"] = power
        battery = np.clip(0.6 - np.cumsum(power) * dt / HEV_BATTERY_CAPACITY_KWS, 0.0, 1.0)
        voltage = 360.0 + 40.0 * (battery - 0.5)
        signals["soc"] = battery * 100.0
        signals["battery_voltage"] = voltage
        signals["battery_current"] = power * 1000.0 / voltage
        oracle_total = power
    else:
        fuel, elec, e_torque, e_rpm, m_rpm, battery = hev_oracle(speed, accel, dt)
        signals["engine_torque"] = e_torque
        signals["engine_rpm"] = e_rpm
        signals["motor_rpm"] = m_rpm
        signals["fuel_power"] = fuel
        signals["electric_power"] = elec
        voltage = 360.0 + 40.0 * (battery - 0.5)
        signals["soc"] = battery * 100.0
        signals["battery_voltage"] = voltage
        signals["battery_current"] = elec * 1000.0 / voltage
        oracle_total = fuel + elec

    floors = {**DEFAULT_NOISE_FLOOR, **spec.noise_floor}
    rng_streams = np.random.SeedSequence(spec.seed).spawn(len(signals))
    channels = {}
    from .core import CHANNEL_UNITS

    for stream, name in zip(rng_streams, sorted(signals)):
        sigma = floors.get(name, 0.0)
        values = signals[name]
        if sigma > 0:
            values = values + np.random.default_rng(stream).normal(0.0, sigma, len(values))
        channels[name] = Channel(
            name=name, unit=CHANNEL_UNITS[name], timestamps=ts, values=values
        )
    meta = {
        "kind": kind.value,
        "rate_hz": repr(spec.rate_hz),
        "seed": str(spec.seed),
    }
    return DriveLog(kind=kind, channels=channels, meta=meta), OracleTruth(ts, oracle_total)


def add_multirate_jitter(
    log: DriveLog,
    rates: dict[str, float],
    jitter_frac: float = 0.0,
    drop_prob: float = 0.0,
    seed: int = 0,
) -> DriveLog:
    """Resample each channel at its own rate with timestamp jitter and drops.

    Values are taken from the nearest original sample; jitter_frac is
    bounded below 0.5 period so resampled timestamps stay strictly
    increasing. Channels absent from `rates` keep their original sampling.
    """
    if not 0.0 <= jitter_frac <= 0.45:
        raise ValueError("jitter_frac must lie in [0, 0.45]")
    if not 0.0 <= drop_prob <= 1.0:
        raise ValueError("drop_prob must lie in [0, 1]")
    for name, rate in rates.items():
        if rate <= 0:
            raise ValueError(f"rate for {name!r} must be positive")

    streams = np.random.SeedSequence(seed).spawn(len(log.channels))
    channels = {}
    for stream, name in zip(streams, sorted(log.channels)):
        ch = log.channels[name]
        if name not in rates or len(ch) == 0:
            channels[name] = ch
            continue
        rng = np.random.default_rng(stream)
        period = 1.0 / rates[name]
        t0, t1 = ch.timestamps[0], ch.timestamps[-1]
        n_ticks = int(np.floor((t1 - t0) / period)) + 1
        ticks = t0 + np.arange(n_ticks) * period
        if jitter_frac > 0:
            ticks = ticks + rng.uniform(-jitter_frac, jitter_frac, n_ticks) * period
        ticks = np.array([round_timestamp(t) for t in ticks])
        keep = rng.random(n_ticks) >= drop_prob
        ticks = ticks[keep]
        idx = np.searchsorted(ch.timestamps, ticks, side="left")
        left = np.clip(idx - 1, 0, len(ch) - 1)
        right = np.clip(idx, 0, len(ch) - 1)
        nearest = np.where(
            np.abs(ticks - ch.timestamps[left]) <= np.abs(ch.timestamps[right] - ticks),
            left,
            right,
        )
        channels[name] = Channel(
            name=name, unit=ch.unit, timestamps=ticks, values=ch.values[nearest]
        )
    return DriveLog(kind=log.kind, channels=channels, meta=dict(log.meta))


# drive-cycle presets: urban/highway motifs with braking in every repeat so
# each chronological split sees regeneration events
def _mixed_motif() -> list[Phase]:
    return [
        Phase("accel", 20.0, 50.0),
        Phase("cruise", 30.0),
        Phase("brake", 15.0, 10.0),
        Phase("accel", 25.0, 90.0),
        Phase("cruise", 40.0),
        Phase("brake", 20.0, 0.0),
        Phase("stop", 10.0),
    ]


def _urban_motif() -> list[Phase]:
    return [
        Phase("accel", 15.0, 40.0),
        Phase("cruise", 20.0),
        Phase("brake", 10.0, 0.0),
        Phase("stop", 5.0),
        Phase("accel", 15.0, 55.0),
        Phase("cruise", 25.0),
        Phase("brake", 12.0, 0.0),
        Phase("stop", 8.0),
    ]


CYCLE_PRESETS = {"mixed-route": _mixed_motif, "urban": _urban_motif}


def preset_spec(
    kind: PowertrainKind,
    preset: str = "mixed-route",
    duration_s: float = 1800.0,
    rate_hz: float = 2.0,
    seed: int = 0,
    noise_floor: dict[str, float] | None = None,
) -> DriveCycleSpec:
    """Repeat a preset motif until it covers the requested duration."""
    if preset not in CYCLE_PRESETS:
        raise KeyError(f"unknown cycle preset {preset!r}; have {sorted(CYCLE_PRESETS)}")
    motif = CYCLE_PRESETS[preset]()
    motif_len = sum(p.duration for p in motif)
    repeats = max(1, int(math.ceil(duration_s / motif_len)))
    phases = tuple(motif * repeats)
    return DriveCycleSpec(
        kind=kind,
        phases=phases,
        rate_hz=rate_hz,
        noise_floor=dict(noise_floor or {}),
        seed=seed,
    )
