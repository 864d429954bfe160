"""Training loop (Adam + MSE, best-val checkpointing), inference, and
parameter/FLOP accounting for all four model kinds."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..core import NumericError
from ..preprocess import ScalerParams, WindowedDataset
from .base import RunContext
from .forest import (
    Forest,
    RfConfig,
    rf_expected_comparisons,
    rf_fit,
    rf_node_count,
    rf_predict,
)
from .lstm import Lstm, LstmConfig, build_lstm
from .tcn import Tcn, TcnConfig, build_tcn
from .transformer import Transformer, TransformerConfig, build_transformer

NEURAL_KINDS = ("lstm", "tcn", "transformer")
MODEL_KINDS = NEURAL_KINDS + ("rf",)


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 64
    lr: float = 0.001
    epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainedModel:
    """A fitted predictor plus everything needed to reproduce and apply it."""

    kind: str
    config: object
    model: object  # Lstm | Tcn | Transformer | Forest
    scaler: ScalerParams | None
    loss_history: list[tuple[float, float]] = field(default_factory=list)
    seed: int = 0
    best_epoch: int = -1

    def predict(
        self,
        ds: WindowedDataset,
        mc_dropout: bool = False,
        seed: int | None = None,
        dropout_override: float | None = None,
    ) -> np.ndarray:
        if self.kind == "rf":
            if mc_dropout:
                raise ValueError("random forest has no dropout to sample")
            return rf_predict(self.model, ds)
        return predict(self.model, ds, mc_dropout=mc_dropout, seed=seed,
                       dropout_override=dropout_override)


def build_model(kind: str, config, seed: int):
    if kind == "lstm":
        return build_lstm(config, seed)
    if kind == "tcn":
        return build_tcn(config, seed)
    if kind == "transformer":
        return build_transformer(config, seed)
    raise ValueError(f"unknown neural model kind {kind!r}")


def config_class(kind: str):
    return {
        "lstm": LstmConfig,
        "tcn": TcnConfig,
        "transformer": TransformerConfig,
        "rf": RfConfig,
    }[kind]


def config_from_dict(kind: str, d: dict):
    return config_class(kind)(**d)


def _forward_batches(model, x: np.ndarray, ctx: RunContext, batch_size: int = 256) -> np.ndarray:
    outs = []
    for lo in range(0, len(x), batch_size):
        outs.append(model.forward(x[lo : lo + batch_size], ctx).data)
    return np.concatenate(outs)


def predict(
    model,
    ds: WindowedDataset,
    mc_dropout: bool = False,
    seed: int | None = None,
    dropout_override: float | None = None,
) -> np.ndarray:
    """One scalar per window, in scaled units.

    mc_dropout=False is deterministic; True samples dropout masks from the
    seed (required), optionally at an overridden rate.
    """
    if ds.n_features != model.config.input_dim:
        raise ValueError(
            f"dataset has {ds.n_features} features, model expects {model.config.input_dim}"
        )
    rng = None
    if mc_dropout:
        if seed is None:
            raise ValueError("mc_dropout=True needs a seed")
        rng = np.random.default_rng(seed)
    ctx = RunContext(dropout_active=mc_dropout, rng=rng, dropout_override=dropout_override)
    return _forward_batches(model, ds.X, ctx)


def _val_mse(model, ds: WindowedDataset) -> float:
    pred = _forward_batches(model, ds.X, RunContext())
    return float(np.mean((pred - ds.y) ** 2))


def train(
    model,
    train_ds: WindowedDataset,
    val_ds: WindowedDataset,
    cfg: TrainConfig,
    scaler: ScalerParams | None = None,
    epoch_callback=None,
) -> TrainedModel:
    """Minimize MSE with Adam; keep the parameters of the best-val epoch.

    A non-finite loss or gradient aborts training and restores the last
    good (best-val) parameters; the loss history then covers only the
    epochs actually run. epoch_callback(epoch, train_mse, val_mse) runs
    after each epoch and stops training early by returning True; it may
    also raise (hyperparameter pruning), which propagates to the caller.
    """
    if train_ds.n_features != model.config.input_dim:
        raise ValueError(
            f"training data has {train_ds.n_features} features, "
            f"model expects {model.config.input_dim}"
        )
    shuffle_rng, dropout_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2)
    )
    ctx = RunContext(dropout_active=True, rng=dropout_rng)

    history: list[tuple[float, float]] = []
    best_val = np.inf
    best_epoch = -1
    best_snap = model.store.snapshot()
    n = train_ds.n_windows
    try:
        for epoch in range(cfg.epochs):
            perm = shuffle_rng.permutation(n)
            sq_sum = 0.0
            for lo in range(0, n, cfg.batch):
                idx = perm[lo : lo + cfg.batch]
                xb, yb = train_ds.X[idx], train_ds.y[idx]
                with ad.Tape() as tape:
                    pred = model.forward(xb, ctx)
                    loss = ad.mse_loss(pred, yb)
                    grads = ad.backward(tape, loss, model.store)
                ad.adam_step(model.store, grads, cfg.lr)
                sq_sum += loss.item() * len(idx)
            val = _val_mse(model, val_ds)
            history.append((sq_sum / n, val))
            if val < best_val:
                best_val = val
                best_epoch = epoch
                best_snap = model.store.snapshot()
            if epoch_callback is not None and epoch_callback(epoch, sq_sum / n, val):
                break
    except NumericError:
        pass  # abort: fall through and restore the last good checkpoint
    model.store.restore(best_snap)
    return TrainedModel(
        kind=model.kind,
        config=model.config,
        model=model,
        scaler=scaler,
        loss_history=history,
        seed=cfg.seed,
        best_epoch=best_epoch,
    )


def fit_forest(ds: WindowedDataset, cfg: RfConfig, scaler: ScalerParams | None = None) -> TrainedModel:
    forest = rf_fit(ds, cfg)
    return TrainedModel(
        kind="rf", config=cfg, model=forest, scaler=scaler, seed=cfg.seed
    )


# ---------------------------------------------------------------------------
# compute accounting
# ---------------------------------------------------------------------------


def count_parameters(model) -> int:
    """Trainable scalars; for forests, total node count across trees."""
    m = model.model if isinstance(model, TrainedModel) else model
    if isinstance(m, Forest):
        return rf_node_count(m)
    return m.store.n_scalars()


def _linear_flops(m: int, n: int) -> int:
    return 2 * m * n + n


def estimate_flops(model, window: int) -> int:
    """FLOPs for one forward pass of a single W-length window.

    One multiply-accumulate counts as 2 FLOPs; activations and other
    elementwise ops count 1 per element. Forest cost is its expected number
    of comparisons.
    """
    m = model.model if isinstance(model, TrainedModel) else model
    if isinstance(m, Forest):
        return rf_expected_comparisons(m)
    cfg = m.config
    w = window
    if isinstance(m, Lstm):
        h = cfg.hidden
        total = 0
        for layer in range(cfg.layers):
            c_in = cfg.input_dim if layer == 0 else h
            per_step = 8 * h * (c_in + h) + 17 * h
            total += w * per_step
        return total + _linear_flops(h, 1)
    if isinstance(m, Tcn):
        ch, k = cfg.channels, cfg.kernel
        total = 0
        for b in range(cfg.blocks):
            c_in = cfg.input_dim if b == 0 else ch
            for j in range(cfg.convs_per_block):
                c = c_in if j == 0 else ch
                total += w * (2 * k * c * ch + ch)  # conv
                total += w * ch  # relu
            if c_in != ch:
                total += w * (2 * c_in * ch + ch)  # skip projection
            total += w * ch  # residual add
        return total + _linear_flops(ch, 1)
    if isinstance(m, Transformer):
        d, heads, ff = cfg.d_model, cfg.heads, cfg.ff_dim
        total = w * (2 * cfg.conv_kernel * cfg.input_dim * d + d)  # projection
        total += w * d  # positional add
        per_layer = 4 * w * _linear_flops(d, d)  # q, k, v, o
        per_layer += 2 * w * w * d  # scores
        per_layer += w * w * heads * 5  # scale + softmax
        per_layer += 2 * w * w * d  # attention-weighted values
        per_layer += w * _linear_flops(d, ff) + w * ff + w * _linear_flops(ff, d)
        per_layer += 2 * 8 * w * d  # two layer_norms
        per_layer += 2 * w * d  # residual adds
        total += cfg.encoder_layers * per_layer
        return total + _linear_flops(d, 1)
    raise ValueError(f"unknown model type {type(m).__name__}")


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------

FOREST_FORMAT = "powertrace-forest-v1"


def _model_header(trained: TrainedModel, experiment: dict | None = None) -> dict:
    header = {
        "kind": trained.kind,
        "config": dataclasses.asdict(trained.config),
        "seed": trained.seed,
        "init_seed": getattr(trained.model, "seed", trained.seed),
        "best_epoch": trained.best_epoch,
        "loss_history": [[float(a), float(b)] for a, b in trained.loss_history],
        "scaler": trained.scaler.to_dict() if trained.scaler else None,
    }
    if experiment is not None:
        header["experiment"] = experiment
    return header


def save_model(trained: TrainedModel, json_path, bin_path=None, experiment: dict | None = None) -> None:
    """Neural models: parameter blob + manifest with a model header.
    Forests: a single JSON document (trees are integer/float lists).
    `experiment` records how the training data was prepared so evaluation
    can rebuild identical datasets."""
    header = _model_header(trained, experiment)
    if trained.kind == "rf":
        doc = {
            "format": FOREST_FORMAT,
            "model": header,
            "forest": trained.model.to_dict(),
        }
        with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    if bin_path is None:
        raise ValueError("neural checkpoints need a bin_path")
    ad.save_params(trained.model.store, json_path, bin_path, extra={"model": header})


def load_model(json_path, bin_path=None) -> TrainedModel:
    with open(json_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    header = manifest["model"]
    kind = header["kind"]
    scaler = ScalerParams.from_dict(header["scaler"]) if header["scaler"] else None
    history = [tuple(pair) for pair in header.get("loss_history", [])]
    if manifest.get("format") == FOREST_FORMAT:
        forest = Forest.from_dict(manifest["forest"])
        return TrainedModel(
            kind="rf",
            config=forest.config,
            model=forest,
            scaler=scaler,
            loss_history=history,
            seed=header["seed"],
            best_epoch=header["best_epoch"],
        )
    if bin_path is None:
        raise ValueError("neural checkpoints need a bin_path")
    config = config_from_dict(kind, header["config"])
    model = build_model(kind, config, header["init_seed"])
    _, arrays = ad.load_params(json_path, bin_path)
    for name, values in arrays.items():
        model.store.params[name].data = values
    model.store.steps.update(manifest.get("steps", {}))
    return TrainedModel(
        kind=kind,
        config=config,
        model=model,
        scaler=scaler,
        loss_history=history,
        seed=header["seed"],
        best_epoch=header["best_epoch"],
    )
