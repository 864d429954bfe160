"""Dilated-residual temporal convolutional network for sequence regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .base import RunContext, linear_head


@dataclass(frozen=True)
class TcnConfig:
    input_dim: int
    channels: int = 64
    dilations: tuple[int, ...] = (1, 2, 4)
    convs_per_block: int = 2
    kernel: int = 5
    dropout: float = 0.002

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.kernel < 1:
            raise ValueError("kernel must be >= 1")
        if self.convs_per_block < 1:
            raise ValueError("convs_per_block must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must satisfy 0 <= p < 1, got {self.dropout}")
        ds = self.dilations
        if any(d2 <= d1 for d1, d2 in zip(ds, ds[1:])) or any(
            d < 1 or (d & (d - 1)) != 0 for d in ds
        ):
            raise ValueError(f"dilations must be strictly increasing powers of 2: {ds}")

    @property
    def blocks(self) -> int:
        return len(self.dilations)

    def receptive_field(self) -> int:
        """Timesteps the final output can see: 1 + sum over convs of (k-1)*d."""
        return 1 + sum(
            (self.kernel - 1) * d * self.convs_per_block for d in self.dilations
        )


class Tcn:
    """Residual blocks of causal dilated convolutions.

    Each block: convs_per_block x (causal conv -> relu -> dropout), plus an
    identity skip (1x1 projection when channel counts differ). The head reads
    the last timestep's features.
    """

    kind = "tcn"

    def __init__(self, config: TcnConfig, seed: int):
        self.config = config
        self.seed = seed
        self.store = ad.ParamStore()
        rng = np.random.default_rng(seed)
        ch = config.channels
        k = config.kernel
        for b, _d in enumerate(config.dilations):
            c_in = config.input_dim if b == 0 else ch
            for j in range(config.convs_per_block):
                c = c_in if j == 0 else ch
                self.store.add(
                    f"block{b}.conv{j}.k", ad.uniform_init(rng, (k, c, ch), k * c)
                )
                self.store.add(f"block{b}.conv{j}.b", np.zeros(ch))
            if c_in != ch:
                self.store.add(
                    f"block{b}.skip.k", ad.uniform_init(rng, (1, c_in, ch), c_in)
                )
                self.store.add(f"block{b}.skip.b", np.zeros(ch))
        self.store.add("head.w", ad.uniform_init(rng, (ch, 1), ch))
        self.store.add("head.b", np.zeros(1))
        self.store.freeze()

    def forward(self, x: np.ndarray, ctx: RunContext) -> ad.Tensor:
        """x: (B, W, C) -> (B,)."""
        cfg = self.config
        p = ctx.rate(cfg.dropout)
        t = ad.Tensor(x)
        for b, dilation in enumerate(cfg.dilations):
            inner = t
            for j in range(cfg.convs_per_block):
                inner = ad.causal_dilated_conv1d(
                    inner,
                    self.store[f"block{b}.conv{j}.k"],
                    self.store[f"block{b}.conv{j}.b"],
                    dilation=dilation,
                )
                inner = ad.relu(inner)
                inner = ad.dropout(inner, p, ctx.rng)
            if f"block{b}.skip.k" in self.store.params:
                skip = ad.causal_dilated_conv1d(
                    t, self.store[f"block{b}.skip.k"], self.store[f"block{b}.skip.b"]
                )
            else:
                skip = t
            t = ad.add(inner, skip)
        last = ad.slice_axis(t, 1, x.shape[1] - 1, x.shape[1])
        last = ad.reshape(last, (x.shape[0], cfg.channels))
        return linear_head(last, self.store["head.w"], self.store["head.b"])


def build_tcn(config: TcnConfig, seed: int) -> Tcn:
    return Tcn(config, seed)
