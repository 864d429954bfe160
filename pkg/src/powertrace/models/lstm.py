"""Stacked LSTM regressor: gated recurrence, final hidden state to a scalar head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .base import RunContext, linear_head


@dataclass(frozen=True)
class LstmConfig:
    input_dim: int
    hidden: int = 32
    layers: int = 3
    dropout: float = 0.2

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1:
            raise ValueError("hidden and layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must satisfy 0 <= p < 1, got {self.dropout}")


class Lstm:
    """Stacked cells with one combined bias per layer (4h gate pre-activations).

    Dropout sits between stacked layers and between the final hidden state
    and the regression head.
    """

    kind = "lstm"

    def __init__(self, config: LstmConfig, seed: int):
        self.config = config
        self.seed = seed
        self.store = ad.ParamStore()
        rng = np.random.default_rng(seed)
        h = config.hidden
        for layer in range(config.layers):
            c_in = config.input_dim if layer == 0 else h
            self.store.add(f"lstm{layer}.wx", ad.uniform_init(rng, (c_in, 4 * h), c_in))
            self.store.add(f"lstm{layer}.wh", ad.uniform_init(rng, (h, 4 * h), h))
            self.store.add(f"lstm{layer}.b", np.zeros(4 * h))
        self.store.add("head.w", ad.uniform_init(rng, (h, 1), h))
        self.store.add("head.b", np.zeros(1))
        self.store.freeze()

    def forward(self, x: np.ndarray, ctx: RunContext) -> ad.Tensor:
        """x: (B, W, C) -> (B,)."""
        cfg = self.config
        b_sz, w, _ = x.shape
        h_dim = cfg.hidden
        p = ctx.rate(cfg.dropout)

        seq = [ad.Tensor(x[:, t, :]) for t in range(w)]
        h_last = None
        for layer in range(cfg.layers):
            wx = self.store[f"lstm{layer}.wx"]
            wh = self.store[f"lstm{layer}.wh"]
            bias = self.store[f"lstm{layer}.b"]
            h = ad.Tensor(np.zeros((b_sz, h_dim)))
            c = ad.Tensor(np.zeros((b_sz, h_dim)))
            outputs = []
            for t in range(w):
                z = ad.add(ad.add(ad.matmul(seq[t], wx), ad.matmul(h, wh)), bias)
                i = ad.sigmoid(ad.slice_axis(z, 1, 0, h_dim))
                f = ad.sigmoid(ad.slice_axis(z, 1, h_dim, 2 * h_dim))
                g = ad.tanh(ad.slice_axis(z, 1, 2 * h_dim, 3 * h_dim))
                o = ad.sigmoid(ad.slice_axis(z, 1, 3 * h_dim, 4 * h_dim))
                c = ad.add(ad.mul(f, c), ad.mul(i, g))
                h = ad.mul(o, ad.tanh(c))
                outputs.append(h)
            h_last = h
            if layer < cfg.layers - 1:
                seq = [ad.dropout(o_t, p, ctx.rng) for o_t in outputs]

        h_last = ad.dropout(h_last, p, ctx.rng)
        return linear_head(h_last, self.store["head.w"], self.store["head.b"])


def build_lstm(config: LstmConfig, seed: int) -> Lstm:
    return Lstm(config, seed)
