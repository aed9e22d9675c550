"""Trainable filter-bank layer producing a multi-scale pyramid.

Each variable has its own lowpass/highpass kernel pair. Level 1 is the
highpass response of the input at full rate; each further level filters the
decimated lowpass response of the previous one, so level ``i`` has
``ceil(T / d**(i-1))`` frames. The final lowpass response is not returned.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError
from .tensor import Tensor, as_tensor, channelwise_conv1d, downsample


@dataclass
class NwlParams:
    K_l: Tensor
    K_h: Tensor
    k: int
    d: int = 2
    min_length: int = 4

    def __post_init__(self):
        if self.K_l.shape != self.K_h.shape or self.K_l.ndim != 2:
            raise DimensionError("lowpass and highpass kernels must both be (tau, c)")
        if self.K_l.shape[0] < 2 or self.k < 1 or self.d < 2:
            raise ValueError("need tau >= 2, k >= 1, d >= 2")

    @property
    def tau(self):
        return self.K_l.shape[0]

    @property
    def channels(self):
        return self.K_l.shape[1]

    def tensors(self, prefix="nwl."):
        return {prefix + "K_l": self.K_l, prefix + "K_h": self.K_h}


class Pyramid:
    """Ordered per-level sequence features, finest level first."""

    def __init__(self, levels):
        self.levels = list(levels)
        lengths = self.lengths
        if any(b >= a for a, b in zip(lengths, lengths[1:])):
            raise DimensionError(f"pyramid lengths must strictly decrease: {lengths}")
        if len({lv.shape[-1] for lv in self.levels}) > 1:
            raise DimensionError("pyramid levels must share channel width")

    @property
    def lengths(self):
        return [lv.shape[-2] for lv in self.levels]

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    def __iter__(self):
        return iter(self.levels)


def nwl_init(c, tau, k, seed, d=2, min_length=4):
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(tau)
    K_l = Tensor(rng.uniform(-bound, bound, (tau, c)), requires_grad=True, name="K_l")
    K_h = Tensor(rng.uniform(-bound, bound, (tau, c)), requires_grad=True, name="K_h")
    return NwlParams(K_l, K_h, k, d, min_length)


def expected_pyramid_lengths(T, k, d=2, min_length=4):
    """``ceil(T / d**(i-1))`` for ``i = 1..k``, stopping before the first
    level shorter than ``min_length`` (level 1 is always kept)."""
    out = []
    n = T
    for i in range(k):
        if i > 0 and n < min_length:
            break
        out.append(n)
        n = -(-n // d)
    return out


def nwl_forward(X, params):
    X = as_tensor(X)
    T = X.shape[-2]
    if X.shape[-1] != params.channels:
        raise DimensionError(f"input has {X.shape[-1]} variables, kernels expect {params.channels}")
    if T < params.d:
        raise DegenerateInputError(f"series of length {T} is shorter than the ratio {params.d}")
    n_levels = len(expected_pyramid_lengths(T, params.k, params.d, params.min_length))
    levels = []
    low = X
    for i in range(n_levels):
        levels.append(channelwise_conv1d(low, params.K_h))
        if i + 1 < n_levels:
            low = downsample(channelwise_conv1d(low, params.K_l), params.d)
    return Pyramid(levels)
