"""Pyramid recurrent layer: one RNN per level with top-down state injection.

At level ``i`` and step ``t`` the cell sees the level's own feature frame and
the state of the level above at index ``min(t // d, len_above - 1)``. Levels
are scanned coarsest first; the finest level's state sequence is returned.
For the LSTM cell the two inputs are concatenated, which is the same as
``C W1 + h_above W3`` with separate weight blocks.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    gather_time,
    lstm_sequence,
    lstm_step,
    matmul,
    relu,
    relu_rnn_sequence,
)

CELLS = ("lstm", "simple")


@dataclass
class PrlParams:
    cell: str
    n_in: int
    n_h: int
    d: int = 2
    shared: bool = True
    top_down: bool = True
    bundles: list = field(default_factory=list)  # [{"W1", "W2", "W3", "b"}, ...]

    @property
    def gate_width(self):
        return 4 * self.n_h if self.cell == "lstm" else self.n_h

    def bundle(self, level):
        return self.bundles[0] if self.shared else self.bundles[level]

    def tensors(self, prefix="prl."):
        out = {}
        for j, b in enumerate(self.bundles):
            p = prefix if self.shared else f"{prefix}level{j}."
            for key in ("W1", "W2", "W3", "b"):
                if key in b:
                    out[p + key] = b[key]
        return out


def prl_init(n_in, n_h, rng, cell="lstm", d=2, shared=True, levels=1, top_down=True):
    if cell not in CELLS:
        raise ConfigError(f"unknown cell kind {cell!r}")
    G = 4 * n_h if cell == "lstm" else n_h
    fan_in = n_in + (2 * n_h if top_down else n_h)
    bound = 1.0 / math.sqrt(fan_in)
    bundles = []
    for _ in range(1 if shared else levels):
        b = {
            "W1": Tensor(rng.uniform(-bound, bound, (n_in, G)), requires_grad=True),
            "W2": Tensor(rng.uniform(-bound, bound, (n_h, G)), requires_grad=True),
        }
        if top_down:
            b["W3"] = Tensor(rng.uniform(-bound, bound, (n_h, G)), requires_grad=True)
        bias = np.zeros(G)
        if cell == "lstm":
            bias[n_h:2 * n_h] = 1.0
        b["b"] = Tensor(bias, requires_grad=True)
        bundles.append(b)
    return PrlParams(cell, n_in, n_h, d, shared, top_down, bundles)


def upper_index(n, n_upper, d):
    return np.minimum(np.arange(n) // d, n_upper - 1)


def prl_step(c_t, h_prev, h_upper, params, level=0, cell_state=None):
    """Single update of one level. Returns the new hidden state, or
    ``(h, cell)`` for the LSTM cell. Pass ``h_upper=None`` at the top level."""
    p = params.bundle(level)
    c_t, h_prev = as_tensor(c_t), as_tensor(h_prev)
    if c_t.shape[-1] != params.n_in or h_prev.shape[-1] != params.n_h:
        raise DimensionError("prl_step: input or state width does not match parameters")
    if h_upper is None:
        h_upper = Tensor(np.zeros(h_prev.shape))
    h_upper = as_tensor(h_upper)
    if params.cell == "simple":
        a = matmul(c_t, p["W1"]) + matmul(h_prev, p["W2"]) + p["b"]
        if params.top_down:
            a = a + matmul(h_upper, p["W3"])
        return relu(a)
    if cell_state is None:
        cell_state = Tensor(np.zeros(h_prev.shape))
    if params.top_down:
        x = concat([c_t, h_upper])
        wx = concat([p["W1"], p["W3"]], axis=0)
    else:
        x, wx = c_t, p["W1"]
    return lstm_step(x, h_prev, as_tensor(cell_state), wx, p["W2"], p["b"])


def _scan(z, p, cell):
    if cell == "lstm":
        return lstm_sequence(z, p["W2"])
    return relu_rnn_sequence(z, p["W2"])


def prl_forward(pyramid, params):
    levels = list(pyramid)
    if not levels:
        raise ValueError("prl_forward needs at least one level")
    for lv in levels:
        if lv.shape[-1] != params.n_in:
            raise DimensionError(f"level width {lv.shape[-1]} != PRL input width {params.n_in}")
    k = len(levels)
    upper = None
    for i in range(k - 1, -1, -1):
        p = params.bundle(i)
        z = matmul(levels[i], p["W1"]) + p["b"]
        if upper is not None:
            idx = upper_index(levels[i].shape[-2], upper.shape[-2], params.d)
            z = z + matmul(gather_time(upper, idx), p["W3"])
        upper = _scan(z, p, params.cell)
    return upper


def prl_forward_unrolled(pyramid, params):
    """Step-by-step reference built from :func:`prl_step` (slow; for tests)."""
    levels = [as_tensor(lv) for lv in pyramid]
    k = len(levels)
    upper = None
    for i in range(k - 1, -1, -1):
        n = levels[i].shape[-2]
        shape = levels[i].shape[:-2] + (params.n_h,)
        h = Tensor(np.zeros(shape))
        cell = Tensor(np.zeros(shape))
        states = []
        idx = upper_index(n, len(upper), params.d) if upper is not None else None
        for t in range(n):
            hu = upper[idx[t]] if upper is not None else None
            out = prl_step(levels[i][..., t, :], h, hu, params, level=i, cell_state=cell)
            if params.cell == "lstm":
                h, cell = out
            else:
                h = out
            states.append(h)
        upper = states
    return upper
