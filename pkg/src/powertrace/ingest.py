"""Raw telemetry parsing and multi-rate channel synchronization.

Raw logs are long-format CSV (`timestamp_s,channel,value,unit`) with one row
per sample. Synchronization picks (or auto-selects) a reference channel and,
for every reference timestamp, assigns each other channel its nearest sample
in time; rows whose nearest sample is further than `max_gap` are dropped.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    AlignedSeries,
    Channel,
    DriveLog,
    EmptyAlignmentError,
    ParseError,
    PowertrainKind,
    TIME_RESOLUTION,
    known_channels,
    median_dt,
    round_timestamp,
)

AUTO = "AUTO"

RAW_HEADER = ["timestamp_s", "channel", "value", "unit"]


@dataclass(frozen=True)
class SyncConfig:
    """Alignment settings.

    reference: channel name, or AUTO to pick the least noisy channel.
    max_gap: reject a row when any channel's nearest sample is further than
        this many seconds; None derives 2x the reference median period.
    """

    reference: str = AUTO
    max_gap: float | None = None
    resolution: float = TIME_RESOLUTION

    def __post_init__(self):
        if self.max_gap is not None and not self.max_gap > 0:
            raise ValueError(f"max_gap must be positive, got {self.max_gap}")


def parse_log(text: str | bytes, kind: PowertrainKind, meta: dict[str, str] | None = None) -> DriveLog:
    """Parse a long-format raw log into per-channel time series.

    Unknown channel names are kept but flagged as extras with a warning;
    malformed rows raise ParseError naming the line.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("line 1: empty input, expected header "
                         f"{','.join(RAW_HEADER)}") from None
    if [h.strip() for h in header] != RAW_HEADER:
        raise ParseError(f"line 1: bad header {header!r}, expected {RAW_HEADER}")

    times: dict[str, list[float]] = {}
    values: dict[str, list[float]] = {}
    units: dict[str, str] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"line {lineno}: expected 4 fields, got {len(row)}")
        t_text, name, v_text, unit = (f.strip() for f in row)
        try:
            t = round_timestamp(float(t_text))
            v = float(v_text)
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric field in {row!r}") from None
        if not (np.isfinite(t) and np.isfinite(v)):
            raise ParseError(f"line {lineno}: non-finite value in {row!r}")
        if name not in times:
            times[name] = []
            values[name] = []
            units[name] = unit
        times[name].append(t)
        values[name].append(v)

    known = set(known_channels(kind))
    extras = sorted(n for n in times if n not in known)
    if extras:
        warnings.warn(
            f"unknown channel(s) for {kind.value}: {', '.join(extras)}; kept as extra",
            stacklevel=2,
        )

    channels = {}
    for name in times:
        order = np.argsort(np.asarray(times[name]), kind="stable")
        channels[name] = Channel(
            name=name,
            unit=units[name],
            timestamps=np.asarray(times[name])[order],
            values=np.asarray(values[name])[order],
        )
    full_meta = dict(meta or {})
    if extras:
        full_meta["extra_channels"] = ",".join(extras)
    return DriveLog(kind=kind, channels=channels, meta=full_meta)


def noise_score(values: np.ndarray) -> float:
    """Normalized first-difference energy: mean(dx^2)/var(x).

    Constant channels score 0 (maximally smooth). Single-sample channels
    score 0 as well: there is no difference energy to measure.
    """
    x = np.asarray(values, dtype=np.float64)
    if len(x) < 2:
        return 0.0
    var = float(np.var(x))
    if var == 0.0:
        return 0.0
    return float(np.mean(np.diff(x) ** 2)) / var


def select_reference(log: DriveLog) -> str:
    """Channel with minimal noise score; lexicographic name breaks ties."""
    if not log.channels:
        raise ValueError("log has no channels")
    scored = sorted((noise_score(ch.values), name) for name, ch in log.channels.items())
    return scored[0][1]


def nearest_indices(source_t: np.ndarray, ref_t: np.ndarray) -> np.ndarray:
    """For each reference time, the index of the nearest source sample.

    Equidistant neighbours resolve to the earlier sample (no peeking
    forward on exact ties).
    """
    pos = np.searchsorted(source_t, ref_t, side="left")
    left = np.clip(pos - 1, 0, len(source_t) - 1)
    right = np.clip(pos, 0, len(source_t) - 1)
    d_left = np.abs(ref_t - source_t[left])
    d_right = np.abs(source_t[right] - ref_t)
    return np.where(d_left <= d_right, left, right)


def synchronize(log: DriveLog, cfg: SyncConfig | None = None) -> AlignedSeries:
    """Align every channel onto one reference timeline by nearest sample.

    Feature columns are all non-target channels in sorted name order with
    the reference first; the target is the sum of the present instantaneous
    power channels (fuel plus electric for hybrids).
    """
    cfg = cfg or SyncConfig()
    ref_name = select_reference(log) if cfg.reference == AUTO else cfg.reference
    if ref_name not in log.channels:
        raise KeyError(f"reference channel {ref_name!r} not in log")
    ref = log.channels[ref_name]
    ref_t = ref.timestamps

    max_gap = cfg.max_gap
    if max_gap is None:
        max_gap = 2.0 * median_dt(ref_t, fallback=1.0)

    target_names = [t for t in log.target_names() if t in log.channels]
    if not target_names:
        raise KeyError(f"log has no target channel (need one of {log.target_names()})")

    feature_names = [ref_name] + sorted(
        n for n in log.channels if n != ref_name and n not in target_names
    )

    columns = {}
    keep = np.ones(len(ref_t), dtype=bool)
    for name in feature_names + target_names:
        ch = log.channels[name]
        idx = nearest_indices(ch.timestamps, ref_t)
        gap = np.abs(ch.timestamps[idx] - ref_t)
        keep &= gap <= max_gap
        columns[name] = ch.values[idx]

    if not keep.any():
        raise EmptyAlignmentError(
            f"every row exceeded max_gap={max_gap} for some channel"
        )

    ts = ref_t[keep]
    features = np.column_stack([columns[n][keep] for n in feature_names])
    target = np.sum([columns[n][keep] for n in target_names], axis=0)
    return AlignedSeries(
        timestamps=ts,
        dt=median_dt(ts, fallback=max_gap / 2.0),
        features=features,
        feature_names=tuple(feature_names),
        target=target,
    )


def format_float(x: float) -> str:
    """Shortest round-trip decimal form; deterministic across runs."""
    return repr(float(x))


def write_raw_log(log: DriveLog, path) -> None:
    """Long-format CSV, channels interleaved in global time order."""
    rows = []
    for name in sorted(log.channels):
        ch = log.channels[name]
        for t, v in zip(ch.timestamps, ch.values):
            rows.append((t, name, v, ch.unit))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(RAW_HEADER) + "\n")
        for t, name, v, unit in rows:
            fh.write(f"{t:.7f},{name},{format_float(v)},{unit}\n")


def read_raw_log(path, kind: PowertrainKind, meta: dict[str, str] | None = None) -> DriveLog:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_log(fh.read(), kind, meta=meta)


def write_aligned_csv(series: AlignedSeries, path) -> None:
    """Wide-format CSV: `timestamp_s,<feature...>,target_kw`."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["timestamp_s", *series.feature_names, "target_kw"]) + "\n")
        for i in range(series.n_rows):
            cells = [f"{series.timestamps[i]:.7f}"]
            cells += [format_float(v) for v in series.features[i]]
            cells.append(format_float(series.target[i]))
            fh.write(",".join(cells) + "\n")


def read_aligned_csv(path) -> AlignedSeries:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "timestamp_s" or header[-1] != "target_kw":
            raise ParseError(f"line 1: bad aligned header {header!r}")
        names = tuple(header[1:-1])
        ts, feats, targ = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"line {lineno}: expected {len(header)} fields")
            try:
                ts.append(round_timestamp(float(row[0])))
                feats.append([float(v) for v in row[1:-1]])
                targ.append(float(row[-1]))
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric field") from None
    ts = np.asarray(ts)
    return AlignedSeries(
        timestamps=ts,
        dt=median_dt(ts, fallback=1.0),
        features=np.asarray(feats),
        feature_names=names,
        target=np.asarray(targ),
    )
