"""Command-line entry point wiring the toolkit into reproducible experiments.

Subcommands: synth, ingest, sync, window, train, evaluate, matrix,
uncertainty, hpo, report. Every run writes a manifest (resolved config, its
hash, seeds, versions) into the output directory; all artifacts except the
timing sidecars are byte-identical across re-runs with the same config and
seed.

Option precedence: command-line flag > config file (--config, flat JSON) >
built-in default. POWERTRACE_SEED provides the seed when neither flag nor
file sets one.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    ADMISSIBLE_FEATURES,
    AlignedSeries,
    EmptyAlignmentError,
    EmptySliceError,
    NumericError,
    ParseError,
    PowertrainKind,
    select_features,
    validate_log,
)
from .evaluation import Report, evaluate_run, predicted_series
from .hpo import (
    PRESETS,
    load_preset,
    load_search_space,
    make_training_objective,
    search,
)
from .ingest import (
    SyncConfig,
    read_aligned_csv,
    read_raw_log,
    synchronize,
    write_aligned_csv,
    write_raw_log,
)
from .models import (
    MODEL_KINDS,
    NEURAL_KINDS,
    TrainConfig,
    build_model,
    config_class,
    fit_forest,
    load_model,
    save_model,
    train,
)
from .preprocess import SplitSpec, apply_minmax, build_datasets, save_windowed, train_row_count
from .synthgen import add_multirate_jitter, generate_cycle, preset_spec
from .uncertainty import (
    EnsembleConfig,
    estimate_feature_noise,
    monte_carlo_ensemble,
    rf_bootstrap_uncertainty,
    write_ensemble_csv,
    write_ensemble_summary,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    """Invalid configuration, reported before any compute."""


class DataError(Exception):
    """Input data failed validation."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one training/evaluation experiment depends on.

    Validated up front: feature names must be admissible for the powertrain
    kind and the data path must exist; this is the block persisted in model
    checkpoints and manifests so evaluation can rebuild identical datasets.
    """

    aligned: str
    kind: PowertrainKind
    features: tuple[str, ...]
    window: int = 10
    stride: int = 1
    split: tuple[float, float, float] = (0.70, 0.10, 0.20)
    epochs: int = 300
    batch: int = 64
    lr: float = 0.001
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "split", tuple(self.split))
        if not self.features:
            raise ConfigError("experiment needs at least one feature")
        _check_admissible(self.kind, list(self.features))
        if not Path(self.aligned).exists():
            raise ConfigError(f"aligned data file not found: {self.aligned}")
        if self.window < 1 or self.stride < 1:
            raise ConfigError("window and stride must be >= 1")
        try:
            SplitSpec(self.split)
        except ValueError as exc:
            raise ConfigError(f"bad split fractions: {exc}") from None

    def to_block(self) -> dict:
        return {
            "kind": self.kind.value, "features": list(self.features),
            "window": self.window, "stride": self.stride,
            "split": list(self.split), "epochs": self.epochs,
            "batch": self.batch, "lr": self.lr, "seed": self.seed,
        }

    def load_series(self) -> AlignedSeries:
        series = read_aligned_csv(self.aligned)
        missing = [f for f in self.features if f not in series.feature_names]
        if missing:
            raise DataError(f"aligned data lacks feature(s) {missing}")
        out = select_features(series, list(self.features))
        if self.window > out.n_rows:
            raise ConfigError(
                f"window {self.window} exceeds the {out.n_rows}-row series"
            )
        return out


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(args, file_cfg: dict, key: str, default):
    """flag > file > default; flags parse with None defaults so absence is visible."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return file_cfg[key]
    return default


def _resolve_seed(args, file_cfg: dict) -> int:
    value = _resolve(args, file_cfg, "seed", None)
    if value is None:
        value = os.environ.get("POWERTRACE_SEED", 0)
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {value!r}") from None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_manifest(out_dir: Path, subcommand: str, config: dict) -> dict:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "config_hash": hashlib.sha256(canonical_json(config).encode()).hexdigest(),
        "versions": {
            "powertrace": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _out_dir(args) -> Path:
    if not args.out:
        raise ConfigError("--out directory is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_kind(text: str | None) -> PowertrainKind:
    if not text:
        raise ConfigError("--kind is required (ice, ev, or hev)")
    try:
        return PowertrainKind.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_features(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [f.strip() for f in text.split(",") if f.strip()]


def _parse_split(text) -> SplitSpec:
    if text is None:
        return SplitSpec()
    if isinstance(text, (list, tuple)):
        parts = [float(v) for v in text]
    else:
        parts = [float(v) for v in str(text).split(",")]
    try:
        return SplitSpec(tuple(parts))
    except ValueError as exc:
        raise ConfigError(f"bad split fractions: {exc}") from None


def _check_admissible(kind: PowertrainKind, features: list[str]) -> None:
    allowed = set(ADMISSIBLE_FEATURES[kind])
    bad = [f for f in features if f not in allowed]
    if bad:
        raise ConfigError(
            f"features {bad} are not admissible for {kind.value}; "
            f"allowed: {sorted(allowed)}"
        )


def _model_config(kind: str, input_dim: int, override_text: str | None):
    overrides = {}
    if override_text:
        text = override_text
        if text.startswith("@"):
            with open(text[1:], "r", encoding="utf-8") as fh:
                text = fh.read()
        try:
            overrides = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--model-config is not valid JSON: {exc}") from None
    cls = config_class(kind)
    if kind == "rf":
        try:
            return cls(**overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model config: {exc}") from None
    try:
        return cls(input_dim=input_dim, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model config: {exc}") from None


def _emit(args, payload: dict) -> None:
    if getattr(args, "json", False):
        print(canonical_json(payload))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _load_series_for_experiment(aligned_path: str, kind: PowertrainKind, features: list[str]) -> AlignedSeries:
    if not Path(aligned_path).exists():
        raise ConfigError(f"aligned data file not found: {aligned_path}")
    series = read_aligned_csv(aligned_path)
    _check_admissible(kind, features)
    missing = [f for f in features if f not in series.feature_names]
    if missing:
        raise DataError(f"aligned data lacks feature(s) {missing}")
    return select_features(series, features)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    file_cfg = _load_config_file(args.config)
    kind = _parse_kind(_resolve(args, file_cfg, "kind", None))
    preset = _resolve(args, file_cfg, "preset", "mixed-route")
    duration = float(_resolve(args, file_cfg, "duration", 1800.0))
    rate = float(_resolve(args, file_cfg, "rate", 2.0))
    seed = _resolve_seed(args, file_cfg)
    out = _out_dir(args)

    spec = preset_spec(kind, preset=preset, duration_s=duration, rate_hz=rate, seed=seed)
    log, oracle = generate_cycle(spec)

    rates = {}
    for item in args.channel_rate or []:
        name, _, value = item.partition("=")
        if not value:
            raise ConfigError(f"--channel-rate needs name=hz, got {item!r}")
        rates[name] = float(value)
    if rates or args.jitter_frac or args.drop_prob:
        log = add_multirate_jitter(
            log, rates, jitter_frac=args.jitter_frac or 0.0,
            drop_prob=args.drop_prob or 0.0, seed=seed,
        )

    write_raw_log(log, out / "raw_log.csv")
    oracle.write_csv(out / "oracle.csv")
    config = {
        "kind": kind.value, "preset": preset, "duration": duration,
        "rate": rate, "seed": seed, "channel_rates": rates,
        "jitter_frac": args.jitter_frac or 0.0, "drop_prob": args.drop_prob or 0.0,
    }
    write_manifest(out, "synth", config)
    _emit(args, {"raw_log": str(out / "raw_log.csv"), "oracle": str(out / "oracle.csv"),
                 "samples": len(oracle.timestamps)})
    return EXIT_OK


def cmd_ingest(args) -> int:
    file_cfg = _load_config_file(args.config)
    kind = _parse_kind(_resolve(args, file_cfg, "kind", None))
    if not Path(args.input).exists():
        raise ConfigError(f"input file not found: {args.input}")
    log = read_raw_log(args.input, kind)
    violations = validate_log(log)
    summary = {
        "kind": kind.value,
        "channels": {
            name: {
                "samples": len(ch),
                "unit": ch.unit,
                "median_period_s": float(np.median(np.diff(ch.timestamps))) if len(ch) > 1 else None,
            }
            for name, ch in sorted(log.channels.items())
        },
        "violations": violations,
    }
    if args.out:
        out = _out_dir(args)
        with open(out / "ingest_summary.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_manifest(out, "ingest", {"kind": kind.value, "input": str(args.input)})
    _emit(args, {"channels": len(log.channels), "violations": violations})
    if violations:
        raise DataError(f"{len(violations)} validation violation(s): {violations}")
    return EXIT_OK


def cmd_sync(args) -> int:
    file_cfg = _load_config_file(args.config)
    kind = _parse_kind(_resolve(args, file_cfg, "kind", None))
    reference = _resolve(args, file_cfg, "reference", "AUTO")
    max_gap = _resolve(args, file_cfg, "max_gap", None)
    if not Path(args.input).exists():
        raise ConfigError(f"input file not found: {args.input}")
    out = _out_dir(args)

    log = read_raw_log(args.input, kind)
    cfg = SyncConfig(reference=reference, max_gap=float(max_gap) if max_gap else None)
    try:
        series = synchronize(log, cfg)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    write_aligned_csv(series, out / "aligned.csv")
    config = {"kind": kind.value, "input": str(args.input), "reference": reference,
              "max_gap": max_gap}
    write_manifest(out, "sync", config)
    _emit(args, {"aligned": str(out / "aligned.csv"), "rows": series.n_rows,
                 "dt": series.dt, "features": list(series.feature_names)})
    return EXIT_OK


def cmd_window(args) -> int:
    file_cfg = _load_config_file(args.config)
    exp = _experiment_from_args(args, file_cfg)
    out = _out_dir(args)

    series = exp.load_series()
    split = SplitSpec(exp.split)
    scaler, train_ds, val_ds, test_ds = build_datasets(series, exp.window, exp.stride, split)
    full = apply_minmax(series, scaler)
    from .preprocess import make_windows

    windows = make_windows(full, exp.window, exp.stride)
    save_windowed(windows, out / "windows_X.csv", out / "windows_y.csv",
                  scaler=scaler, scaler_path=out / "scaler.json")
    config = {"aligned": str(args.aligned), **{k: v for k, v in exp.to_block().items()
                                               if k not in ("epochs", "batch", "lr")}}
    write_manifest(out, "window", config)
    _emit(args, {"windows": windows.n_windows,
                 "train": train_ds.n_windows, "val": val_ds.n_windows,
                 "test": test_ds.n_windows})
    return EXIT_OK


def _experiment_from_args(args, file_cfg: dict, defaults: dict | None = None) -> ExperimentConfig:
    d = defaults or {}
    kind = _parse_kind(_resolve(args, file_cfg, "kind", None))
    features = _parse_features(_resolve(args, file_cfg, "features", None))
    if not features:
        raise ConfigError("--features is required")
    split = _parse_split(_resolve(args, file_cfg, "split", None))
    return ExperimentConfig(
        aligned=str(args.aligned),
        kind=kind,
        features=tuple(features),
        window=int(_resolve(args, file_cfg, "window", d.get("window", 10))),
        stride=int(_resolve(args, file_cfg, "stride", 1)),
        split=split.fractions,
        epochs=int(_resolve(args, file_cfg, "epochs", d.get("epochs", 300))),
        batch=int(_resolve(args, file_cfg, "batch", 64)),
        lr=float(_resolve(args, file_cfg, "lr", 0.001)),
        seed=_resolve_seed(args, file_cfg),
    )


def _train_once(series, model_kind, model_cfg, experiment: dict):
    split = SplitSpec(tuple(experiment["split"]))
    scaler, train_ds, val_ds, test_ds = build_datasets(
        series, experiment["window"], experiment["stride"], split
    )
    if model_kind == "rf":
        cfg = dataclasses.replace(model_cfg, seed=experiment["seed"])
        trained = fit_forest(train_ds, cfg, scaler)
    else:
        model = build_model(model_kind, model_cfg, experiment["seed"])
        tcfg = TrainConfig(batch=experiment["batch"], lr=experiment["lr"],
                           epochs=experiment["epochs"], seed=experiment["seed"])
        trained = train(model, train_ds, val_ds, tcfg, scaler=scaler)
    return trained, train_ds, val_ds, test_ds


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    model_kind = _resolve(args, file_cfg, "model", None)
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"--model must be one of {MODEL_KINDS}, got {model_kind!r}")
    exp = _experiment_from_args(args, file_cfg)
    out = _out_dir(args)

    series = exp.load_series()
    model_cfg = _model_config(model_kind, len(exp.features), args.model_config)
    experiment = exp.to_block()

    started = time.perf_counter()
    trained, train_ds, val_ds, test_ds = _train_once(series, model_kind, model_cfg, experiment)
    elapsed = time.perf_counter() - started

    save_model(trained, out / "model.json",
               None if model_kind == "rf" else out / "model.bin",
               experiment=experiment)
    with open(out / "loss_history.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_mse,val_mse\n")
        for i, (tr_mse, va_mse) in enumerate(trained.loss_history):
            fh.write(f"{i},{repr(tr_mse)},{repr(va_mse)}\n")
    with open(out / "timings.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"train_wall_s": elapsed}, fh)
        fh.write("\n")
    config = dict(experiment)
    config.update({"model": model_kind, "aligned": str(args.aligned)})
    write_manifest(out, "train", config)
    _emit(args, {
        "model": str(out / "model.json"),
        "best_epoch": trained.best_epoch,
        "epochs_run": len(trained.loss_history),
        "val_mse_best": min((v for _, v in trained.loss_history), default=None),
        "train_windows": train_ds.n_windows,
    })
    return EXIT_OK


def _write_predictions_csv(path, actual, predicted) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t_end_s,actual_kw,predicted_kw,actual_cum_kws,predicted_cum_kws\n")
        for i in range(actual.n):
            fh.write(
                f"{actual.t[i]:.7f},{repr(float(actual.p_instant[i]))},"
                f"{repr(float(predicted.p_instant[i]))},"
                f"{repr(float(actual.p_cumulative[i]))},"
                f"{repr(float(predicted.p_cumulative[i]))}\n"
            )


def cmd_evaluate(args) -> int:
    file_cfg = _load_config_file(args.config)
    model_dir = Path(args.model_dir)
    json_path = model_dir / "model.json"
    bin_path = model_dir / "model.bin"
    if not json_path.exists():
        raise ConfigError(f"no model.json under {model_dir}")
    trained = load_model(json_path, bin_path if bin_path.exists() else None)
    with open(json_path, "r", encoding="utf-8") as fh:
        experiment = json.load(fh)["model"].get("experiment")
    if experiment is None:
        raise ConfigError("checkpoint lacks an experiment block; re-train via the CLI")
    kind = PowertrainKind.parse(experiment["kind"])

    features_flag = _parse_features(_resolve(args, file_cfg, "features", None))
    if features_flag is not None and features_flag != experiment["features"]:
        raise ConfigError(
            f"feature order {features_flag} does not match the model's "
            f"training order {experiment['features']}"
        )
    out = _out_dir(args)
    series = _load_series_for_experiment(args.aligned, kind, experiment["features"])
    split = SplitSpec(tuple(experiment["split"]))
    _, _, _, test_ds = build_datasets(series, experiment["window"], experiment["stride"], split)

    started = time.perf_counter()
    report = evaluate_run(trained, test_ds, vehicle=kind.value,
                          per_step_dt=bool(args.per_step_dt))
    elapsed = time.perf_counter() - started
    measured = report.runtime_s
    report.runtime_s = None  # timing goes to the sidecar; artifact stays reproducible
    report.save(out / "report.json")
    actual, predicted = predicted_series(trained, test_ds)
    _write_predictions_csv(out / "predictions.csv", actual, predicted)
    with open(out / "timings.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"evaluate_wall_s": elapsed, "predict_wall_s": measured}, fh)
        fh.write("\n")
    write_manifest(out, "evaluate", {
        "aligned": str(args.aligned), "model_dir": str(model_dir),
        "experiment": experiment,
    })
    _emit(args, {
        "report": str(out / "report.json"),
        "cumulative_mae_pct": report.cumulative_mae_pct,
        "cumulative_rmse_pct": report.cumulative_rmse_pct,
        "instant_mae_kw": report.instant_mae_kw,
    })
    return EXIT_OK


def _matrix_cell(payload: dict) -> dict:
    """One (feature set x model) cell; runs in a worker process."""
    try:
        kind = PowertrainKind.parse(payload["kind"])
        series = _load_series_for_experiment(payload["aligned"], kind, payload["features"])
        model_cfg = _model_config(payload["model"], len(payload["features"]), None)
        trained, _, _, test_ds = _train_once(
            series, payload["model"], model_cfg, payload["experiment"]
        )
        report = evaluate_run(trained, test_ds, vehicle=payload["kind"])
        report.runtime_s = None
        cell_dir = Path(payload["cell_dir"])
        cell_dir.mkdir(parents=True, exist_ok=True)
        report.save(cell_dir / "report.json")
        return {
            "features": payload["features"], "model": payload["model"],
            "status": "ok", "report": report.to_dict(),
        }
    except Exception as exc:  # per-cell failures must not kill the grid
        return {
            "features": payload["features"], "model": payload["model"],
            "status": "error", "error": f"{type(exc).__name__}: {exc}",
        }


def cmd_matrix(args) -> int:
    file_cfg = _load_config_file(args.config)
    kind = _parse_kind(_resolve(args, file_cfg, "kind", None))
    sets_text = _resolve(args, file_cfg, "feature_sets", None)
    if sets_text is None:
        raise ConfigError("--feature-sets is required (pipe-separated sets)")
    if isinstance(sets_text, str):
        feature_sets = [
            [f.strip() for f in group.split(",") if f.strip()]
            for group in sets_text.split("|") if group.strip()
        ]
    else:
        feature_sets = [list(group) for group in sets_text]
    models_text = _resolve(args, file_cfg, "models", "tcn,lstm,transformer,rf")
    models = (
        [m.strip() for m in models_text.split(",") if m.strip()]
        if isinstance(models_text, str) else list(models_text)
    )
    for m in models:
        if m not in MODEL_KINDS:
            raise ConfigError(f"unknown model {m!r} in --models")
    window = int(_resolve(args, file_cfg, "window", 10))
    stride = int(_resolve(args, file_cfg, "stride", 1))
    split = _parse_split(_resolve(args, file_cfg, "split", None))
    epochs = int(_resolve(args, file_cfg, "epochs", 60))
    batch = int(_resolve(args, file_cfg, "batch", 64))
    lr = float(_resolve(args, file_cfg, "lr", 0.001))
    seed = _resolve_seed(args, file_cfg)
    workers = int(_resolve(args, file_cfg, "workers", 1))
    out = _out_dir(args)

    payloads = []
    for si, fs in enumerate(feature_sets):
        # per-set config validation happens before any cell computes
        exp = ExperimentConfig(
            aligned=str(args.aligned), kind=kind, features=tuple(fs),
            window=window, stride=stride, split=split.fractions,
            epochs=epochs, batch=batch, lr=lr, seed=seed,
        )
        for model in models:
            payloads.append({
                "kind": kind.value, "aligned": str(args.aligned), "features": fs,
                "model": model, "experiment": exp.to_block(),
                "cell_dir": str(out / "cells" / f"set{si}_{model}"),
            })

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_matrix_cell, payloads))
    else:
        results = [_matrix_cell(p) for p in payloads]

    metrics = ("instant_mae_kw", "instant_rmse_kw", "cumulative_mae_pct", "cumulative_rmse_pct")
    with open(out / "matrix.csv", "w", encoding="utf-8", newline="\n") as fh:
        header = ["feature_set"]
        for model in models:
            for metric in metrics:
                header.append(f"{model}.{metric}")
        fh.write(",".join(header) + "\n")
        by_key = {(canonical_json(r["features"]), r["model"]): r for r in results}
        for fs in feature_sets:
            row = [" ".join(fs)]
            for model in models:
                r = by_key[(canonical_json(fs), model)]
                if r["status"] == "ok":
                    row += [repr(float(r["report"][m])) for m in metrics]
                else:
                    row += [""] * len(metrics)
            fh.write(",".join(row) + "\n")
    failures = [r for r in results if r["status"] == "error"]
    with open(out / "matrix_status.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {"cells": len(results), "failed": len(failures), "failures": failures},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    write_manifest(out, "matrix", {
        "kind": kind.value, "aligned": str(args.aligned),
        "feature_sets": feature_sets, "models": models, "window": window,
        "stride": stride, "split": list(split.fractions), "epochs": epochs,
        "batch": batch, "lr": lr, "seed": seed,
    })
    _emit(args, {"cells": len(results), "failed": len(failures),
                 "matrix": str(out / "matrix.csv")})
    return EXIT_OK


def cmd_uncertainty(args) -> int:
    file_cfg = _load_config_file(args.config)
    model_kind = _resolve(args, file_cfg, "model", None)
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"--model must be one of {MODEL_KINDS}, got {model_kind!r}")
    exp = _experiment_from_args(args, file_cfg, defaults={"epochs": 60})
    runs = int(_resolve(args, file_cfg, "runs", 30))
    dropout_p = float(_resolve(args, file_cfg, "dropout", 0.2))
    segment = int(_resolve(args, file_cfg, "noise_segment", 200))
    out = _out_dir(args)

    series = exp.load_series()
    model_cfg = _model_config(model_kind, len(exp.features), args.model_config)
    experiment = exp.to_block()
    split = SplitSpec(exp.split)

    scaler, train_ds, val_ds, test_ds = build_datasets(series, exp.window, exp.stride, split)
    started = time.perf_counter()
    if model_kind == "rf":
        trained = fit_forest(train_ds, dataclasses.replace(model_cfg, seed=exp.seed), scaler)
        result = rf_bootstrap_uncertainty(trained, test_ds)
        noise_doc = None
    else:
        scaled = apply_minmax(series, scaler)
        n_windows = (series.n_rows - exp.window) // exp.stride + 1
        from .preprocess import split_sizes

        n_tr, _, _ = split_sizes(n_windows, split)
        noise = estimate_feature_noise(
            scaled, segment_len=segment,
            end_row=train_row_count(n_tr, exp.window, exp.stride),
        )
        ens_cfg = EnsembleConfig(
            runs=runs,
            dropout_p=dropout_p,
            inject_train_noise=not args.no_train_noise,
            inject_test_noise=not args.no_test_noise,
            reinitialize_weights=not args.no_reinit,
            base_seed=exp.seed,
            share_noise_realization=bool(args.share_noise),
        )
        tcfg = TrainConfig(batch=exp.batch, lr=exp.lr, epochs=exp.epochs, seed=exp.seed)
        result = monte_carlo_ensemble(
            lambda s: build_model(model_kind, model_cfg, s),
            train_ds, val_ds, test_ds, ens_cfg, tcfg, noise=noise, scaler=scaler,
        )
        noise_doc = noise.to_dict()
    elapsed = time.perf_counter() - started

    write_ensemble_csv(result, out / "ensemble_instant.csv", out / "ensemble_cumulative.csv")
    write_ensemble_summary(result, out / "ensemble_summary.json",
                           extra={"model": model_kind, "noise": noise_doc})
    with open(out / "timings.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"ensemble_wall_s": elapsed}, fh)
        fh.write("\n")
    config = dict(experiment)
    config.update({"model": model_kind, "runs": runs, "dropout": dropout_p,
                   "noise_segment": segment, "aligned": str(args.aligned),
                   "share_noise": bool(args.share_noise)})
    write_manifest(out, "uncertainty", config)
    _emit(args, {"summary": str(out / "ensemble_summary.json"),
                 **{k: f"{m:.6g} ± {d:.6g}" for k, (m, d) in sorted(result.summaries.items())}})
    return EXIT_OK


def cmd_hpo(args) -> int:
    file_cfg = _load_config_file(args.config)
    out = _out_dir(args)
    preset_name = _resolve(args, file_cfg, "preset", None)
    if preset_name:
        preset = load_preset(preset_name)
        doc = {"source": f"preset:{preset_name}", **preset}
        with open(out / "best.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_manifest(out, "hpo", {"preset": preset_name})
        _emit(args, {"best": str(out / "best.json"), "point": preset["point"]})
        return EXIT_OK

    kind = _parse_kind(_resolve(args, file_cfg, "kind", None))
    features = _parse_features(_resolve(args, file_cfg, "features", None))
    if not features:
        raise ConfigError("--features is required")
    model_kind = _resolve(args, file_cfg, "model", None)
    if model_kind not in NEURAL_KINDS:
        raise ConfigError(f"--model must be one of {NEURAL_KINDS} for hpo")
    if not args.space:
        raise ConfigError("--space search-space JSON is required")
    budget = int(_resolve(args, file_cfg, "budget", 20))
    trial_epochs = int(_resolve(args, file_cfg, "trial_epochs", 60))
    stride = int(_resolve(args, file_cfg, "stride", 1))
    split = _parse_split(_resolve(args, file_cfg, "split", None))
    seed = _resolve_seed(args, file_cfg)

    series = _load_series_for_experiment(args.aligned, kind, features)
    try:
        space = load_search_space(args.space)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad search space: {exc}") from None
    objective = make_training_objective(
        model_kind, series, stride=stride, split=split,
        trial_epochs=trial_epochs, metric=space.objective, seed=seed,
    )
    best, trials = search(
        space, objective, budget=budget, seed=seed, log_path=out / "trials.jsonl"
    )
    doc = {
        "source": "search",
        "kind": model_kind,
        "point": best.point,
        "objective": space.objective,
        "value": best.final,
        "trial_id": best.trial_id,
        "budget": budget,
        "completed": sum(1 for t in trials if t.status == "complete"),
        "pruned": sum(1 for t in trials if t.status == "pruned"),
    }
    with open(out / "best.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out, "hpo", {
        "kind": kind.value, "model": model_kind, "features": features,
        "space": str(args.space), "budget": budget, "trial_epochs": trial_epochs,
        "seed": seed, "aligned": str(args.aligned),
    })
    _emit(args, {"best": str(out / "best.json"), "point": best.point, "value": best.final})
    return EXIT_OK


def _read_band_csv(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    rows = np.atleast_2d(rows)
    return rows[:, 0], rows[:, 1], rows[:, 2]


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    if not run_dir.exists():
        raise ConfigError(f"run directory not found: {run_dir}")
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    from . import plots

    produced = {}
    pred_csv = run_dir / "predictions.csv"
    if pred_csv.exists():
        rows = np.atleast_2d(np.loadtxt(pred_csv, delimiter=",", skiprows=1))
        plots.plot_prediction(
            rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3], rows[:, 4],
            out / "predictions.svg", title=args.title or "actual vs predicted",
        )
        produced["predictions_svg"] = str(out / "predictions.svg")
    inst_csv = run_dir / "ensemble_instant.csv"
    cum_csv = run_dir / "ensemble_cumulative.csv"
    if inst_csv.exists() and cum_csv.exists():
        t, mean_i, std_i = _read_band_csv(inst_csv)
        _, mean_c, std_c = _read_band_csv(cum_csv)
        plots.plot_uncertainty(
            t, mean_i, std_i, mean_c, std_c,
            out / "uncertainty.svg", title=args.title or "prediction uncertainty",
        )
        produced["uncertainty_svg"] = str(out / "uncertainty.svg")
    report_json = run_dir / "report.json"
    if report_json.exists():
        report = Report.load(report_json)
        with open(out / "metrics.csv", "w", encoding="utf-8", newline="\n") as fh:
            d = report.to_dict()
            keys = [k for k in d if k not in ("notes", "feature_set")]
            fh.write(",".join(["feature_set"] + keys) + "\n")
            fh.write(",".join([" ".join(d["feature_set"])] + [str(d[k]) for k in keys]) + "\n")
        produced["metrics_csv"] = str(out / "metrics.csv")
    if not produced:
        raise DataError(
            f"nothing to report: {run_dir} has no predictions.csv, ensemble CSVs, or report.json"
        )
    write_manifest(out, "report", {"run": str(run_dir)})
    _emit(args, produced)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat JSON config file; flags override it")
    p.add_argument("--seed", type=int, default=None,
                   help="global seed (or POWERTRACE_SEED env var)")
    p.add_argument("--json", action="store_true", help="machine-readable stdout")
    p.add_argument("--out", required=False, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="powertrace",
        description="Vehicle power consumption prediction toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic drive log")
    _add_common(p)
    p.add_argument("--kind", help="ice | ev | hev")
    p.add_argument("--preset", help="drive-cycle preset (mixed-route, urban)")
    p.add_argument("--duration", type=float, default=None, help="seconds")
    p.add_argument("--rate", type=float, default=None, help="base sample rate Hz")
    p.add_argument("--channel-rate", action="append", metavar="NAME=HZ",
                   help="resample one channel at its own rate (repeatable)")
    p.add_argument("--jitter-frac", type=float, default=None,
                   help="timestamp jitter as a fraction of the channel period")
    p.add_argument("--drop-prob", type=float, default=None, help="sample drop probability")

    p = sub.add_parser("ingest", help="parse and validate a raw log")
    _add_common(p)
    p.add_argument("--input", required=True, help="raw long-format CSV")
    p.add_argument("--kind", help="ice | ev | hev")

    p = sub.add_parser("sync", help="synchronize multi-rate channels")
    _add_common(p)
    p.add_argument("--input", required=True, help="raw long-format CSV")
    p.add_argument("--kind", help="ice | ev | hev")
    p.add_argument("--reference", default=None, help="reference channel or AUTO")
    p.add_argument("--max-gap", dest="max_gap", type=float, default=None,
                   help="drop rows whose nearest sample is further than this (s)")

    p = sub.add_parser("window", help="export a windowed dataset")
    _add_common(p)
    p.add_argument("--aligned", required=True, help="aligned wide CSV")
    p.add_argument("--kind", help="ice | ev | hev")
    p.add_argument("--features", help="comma-separated feature names")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--split", default=None, help="train,val,test fractions")

    p = sub.add_parser("train", help="train one model")
    _add_common(p)
    p.add_argument("--aligned", required=True)
    p.add_argument("--kind")
    p.add_argument("--features")
    p.add_argument("--model", help="lstm | tcn | transformer | rf")
    p.add_argument("--model-config", help="JSON overrides (or @file)")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)

    p = sub.add_parser("evaluate", help="evaluate a trained model on the test split")
    _add_common(p)
    p.add_argument("--aligned", required=True)
    p.add_argument("--model-dir", required=True, help="directory holding model.json[/bin]")
    p.add_argument("--features", default=None,
                   help="must match the model's training feature order if given")
    p.add_argument("--per-step-dt", dest="per_step_dt", action="store_true",
                   help="integrate with per-sample intervals (irregular logs)")

    p = sub.add_parser("matrix", help="run a feature-set x model grid")
    _add_common(p)
    p.add_argument("--aligned", required=True)
    p.add_argument("--kind")
    p.add_argument("--feature-sets", dest="feature_sets",
                   help="pipe-separated sets of comma-separated names")
    p.add_argument("--models", default=None, help="comma-separated model kinds")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--workers", type=int, default=None, help="parallel cell workers")

    p = sub.add_parser("uncertainty", help="Monte Carlo ensemble bands")
    _add_common(p)
    p.add_argument("--aligned", required=True)
    p.add_argument("--kind")
    p.add_argument("--features")
    p.add_argument("--model")
    p.add_argument("--model-config", help="JSON overrides (or @file)")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--runs", type=int, default=None, help="ensemble size N")
    p.add_argument("--dropout", type=float, default=None, help="inference dropout rate")
    p.add_argument("--noise-segment", dest="noise_segment", type=int, default=None,
                   help="steady-state segment length for noise estimation")
    p.add_argument("--no-train-noise", action="store_true")
    p.add_argument("--no-test-noise", action="store_true")
    p.add_argument("--no-reinit", action="store_true")
    p.add_argument("--share-noise", action="store_true",
                   help="reuse one noise realization across runs instead of fresh draws")
    p.add_argument("--workers", type=int, default=None,
                   help="accepted for interface parity; runs execute sequentially")

    p = sub.add_parser("hpo", help="hyperparameter search with median pruning")
    _add_common(p)
    p.add_argument("--aligned")
    p.add_argument("--kind")
    p.add_argument("--features")
    p.add_argument("--model")
    p.add_argument("--space", help="search-space JSON file")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--trial-epochs", dest="trial_epochs", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--preset", default=None,
                   help=f"load a tuned preset instead of searching: {sorted(PRESETS)}")
    p.add_argument("--workers", type=int, default=None,
                   help="accepted for interface parity; trials execute sequentially")

    p = sub.add_parser("report", help="render figures for a finished run")
    _add_common(p)
    p.add_argument("--run", required=True, help="directory written by evaluate/uncertainty")
    p.add_argument("--title", default=None)

    return parser


HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "sync": cmd_sync,
    "window": cmd_window,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "matrix": cmd_matrix,
    "uncertainty": cmd_uncertainty,
    "hpo": cmd_hpo,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ParseError, EmptyAlignmentError, EmptySliceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
