"""Per-channel running-statistics normalizer.

Statistics are always treated as constants during differentiation, which
keeps the backward rule a plain scale-and-shift. In frozen mode the stored
statistics are used untouched (deterministic inference/testing); in update
mode they are first refreshed from the current activation by an exponential
moving average and the refreshed values are applied.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .graph import DiffArray, constant


class RunningNorm:
    """Normalize a (C, H, W) activation per channel with learned scale/shift.

    ``gamma`` and ``beta`` are trainable (C,) arrays owned by the caller's
    parameter registry; ``running_mean``/``running_var`` are plain buffers.
    """

    def __init__(self, gamma: DiffArray, beta: DiffArray,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var
        self.momentum = float(momentum)
        self.eps = float(eps)

    def __call__(self, x: DiffArray, update_stats: bool = False) -> DiffArray:
        if update_stats:
            batch_mean = x.value.mean(axis=(1, 2))
            batch_var = x.value.var(axis=(1, 2))
            self.running_mean += self.momentum * (batch_mean - self.running_mean)
            self.running_var += self.momentum * (batch_var - self.running_var)
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        # y = x * (gamma * inv) + (beta - mean * gamma * inv), two fused broadcasts
        scale = ops.mul(self.gamma, constant(inv.astype(x.value.dtype)))
        shift = ops.sub(self.beta, ops.mul(scale, constant(self.running_mean.astype(x.value.dtype))))
        scale3 = ops.reshape(scale, (-1, 1, 1))
        shift3 = ops.reshape(shift, (-1, 1, 1))
        return ops.add(ops.mul(x, scale3), shift3)
