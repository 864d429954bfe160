"""Shared bits for the sequence models: forward context and the linear head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad


@dataclass
class RunContext:
    """Per-forward-pass switches.

    dropout_active: draw dropout masks (training, or Monte Carlo inference).
    rng: mask source; required whenever an effective rate is positive.
    dropout_override: replace every configured dropout rate (Monte Carlo
        inference uses one rate regardless of what training used).
    """

    dropout_active: bool = False
    rng: np.random.Generator | None = None
    dropout_override: float | None = None

    def rate(self, configured: float) -> float:
        if not self.dropout_active:
            return 0.0
        if self.dropout_override is not None:
            return self.dropout_override
        return configured


def linear_head(h: ad.Tensor, weight: ad.Tensor, bias: ad.Tensor) -> ad.Tensor:
    """(B, d) -> (B,) scalar prediction per window."""
    out = ad.add(ad.matmul(h, weight), bias)
    return ad.reshape(out, (h.shape[0],))
