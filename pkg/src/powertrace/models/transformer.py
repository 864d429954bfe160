"""Transformer encoder regressor with a convolutional input projection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .base import RunContext, linear_head


@dataclass(frozen=True)
class TransformerConfig:
    input_dim: int
    d_model: int = 64
    encoder_layers: int = 4
    heads: int = 2
    ff_dim: int = 32
    dropout: float = 0.1
    conv_kernel: int = 3

    def __post_init__(self):
        if self.encoder_layers < 1:
            raise ValueError("encoder_layers must be >= 1")
        if self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must satisfy 0 <= p < 1, got {self.dropout}")


def sinusoidal_encoding(length: int, d_model: int) -> np.ndarray:
    """Classic sin/cos table: even dims sine, odd dims cosine."""
    pos = np.arange(length)[:, None].astype(np.float64)
    two_i = np.arange(0, d_model, 2).astype(np.float64)
    div = np.exp(-math.log(10000.0) * two_i / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: table[:, 1::2].shape[1]])
    return table


class Transformer:
    """Conv projection -> positional encoding -> encoder stack -> scalar head.

    Attention is unmasked: the prediction reads the last timestep of a
    complete window, so there is nothing ahead of it to leak. Post-norm
    residual wiring (add then layer_norm). The per-head attention weights of
    the most recent forward pass are kept on `last_attention` for inspection.
    """

    kind = "transformer"

    def __init__(self, config: TransformerConfig, seed: int):
        self.config = config
        self.seed = seed
        self.store = ad.ParamStore()
        self.last_attention: list[np.ndarray] = []
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.store.add(
            "proj.k",
            ad.uniform_init(
                rng, (config.conv_kernel, config.input_dim, d), config.conv_kernel * config.input_dim
            ),
        )
        self.store.add("proj.b", np.zeros(d))
        for l in range(config.encoder_layers):
            for name in ("q", "k", "v", "o"):
                self.store.add(f"enc{l}.attn.w{name}", ad.uniform_init(rng, (d, d), d))
                self.store.add(f"enc{l}.attn.b{name}", np.zeros(d))
            self.store.add(f"enc{l}.ln1.g", np.ones(d))
            self.store.add(f"enc{l}.ln1.b", np.zeros(d))
            self.store.add(f"enc{l}.ff.w1", ad.uniform_init(rng, (d, config.ff_dim), d))
            self.store.add(f"enc{l}.ff.b1", np.zeros(config.ff_dim))
            self.store.add(f"enc{l}.ff.w2", ad.uniform_init(rng, (config.ff_dim, d), config.ff_dim))
            self.store.add(f"enc{l}.ff.b2", np.zeros(d))
            self.store.add(f"enc{l}.ln2.g", np.ones(d))
            self.store.add(f"enc{l}.ln2.b", np.zeros(d))
        self.store.add("head.w", ad.uniform_init(rng, (d, 1), d))
        self.store.add("head.b", np.zeros(1))
        self.store.freeze()

    def _attention(self, t: ad.Tensor, layer: int, b_sz: int, w: int, p: float, ctx: RunContext) -> ad.Tensor:
        cfg = self.config
        d, n_heads = cfg.d_model, cfg.heads
        d_head = d // n_heads

        def split_heads(m: ad.Tensor) -> ad.Tensor:
            m = ad.reshape(m, (b_sz, w, n_heads, d_head))
            return ad.transpose(m, (0, 2, 1, 3))  # (B, H, W, dh)

        q = split_heads(ad.add(ad.matmul(t, self.store[f"enc{layer}.attn.wq"]), self.store[f"enc{layer}.attn.bq"]))
        k = split_heads(ad.add(ad.matmul(t, self.store[f"enc{layer}.attn.wk"]), self.store[f"enc{layer}.attn.bk"]))
        v = split_heads(ad.add(ad.matmul(t, self.store[f"enc{layer}.attn.wv"]), self.store[f"enc{layer}.attn.bv"]))

        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d_head))
        attn = ad.softmax(scores)
        self.last_attention.append(attn.data)
        mixed = ad.matmul(attn, v)  # (B, H, W, dh)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b_sz, w, d))
        out = ad.add(ad.matmul(merged, self.store[f"enc{layer}.attn.wo"]), self.store[f"enc{layer}.attn.bo"])
        return ad.dropout(out, p, ctx.rng)

    def forward(self, x: np.ndarray, ctx: RunContext) -> ad.Tensor:
        """x: (B, W, C) -> (B,)."""
        cfg = self.config
        b_sz, w, _ = x.shape
        p = ctx.rate(cfg.dropout)
        self.last_attention = []

        t = ad.causal_dilated_conv1d(ad.Tensor(x), self.store["proj.k"], self.store["proj.b"])
        t = ad.dropout(t, p, ctx.rng)
        t = ad.add(t, sinusoidal_encoding(w, cfg.d_model))

        for l in range(cfg.encoder_layers):
            attn_out = self._attention(t, l, b_sz, w, p, ctx)
            t = ad.layer_norm(ad.add(t, attn_out), self.store[f"enc{l}.ln1.g"], self.store[f"enc{l}.ln1.b"])
            ff = ad.relu(ad.add(ad.matmul(t, self.store[f"enc{l}.ff.w1"]), self.store[f"enc{l}.ff.b1"]))
            ff = ad.add(ad.matmul(ff, self.store[f"enc{l}.ff.w2"]), self.store[f"enc{l}.ff.b2"])
            ff = ad.dropout(ff, p, ctx.rng)
            t = ad.layer_norm(ad.add(t, ff), self.store[f"enc{l}.ln2.g"], self.store[f"enc{l}.ln2.b"])

        last = ad.reshape(ad.slice_axis(t, 1, w - 1, w), (b_sz, cfg.d_model))
        return linear_head(last, self.store["head.w"], self.store["head.b"])


def build_transformer(config: TransformerConfig, seed: int) -> Transformer:
    return Transformer(config, seed)
