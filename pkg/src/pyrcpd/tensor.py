"""Minimal reverse-mode autodiff over float64 numpy arrays.

Sequence tensors are ``(T, c)`` or batched ``(B, T, c)``; every sequence op
treats axis ``-2`` as time. Ops record a closure mapping the output gradient
to one gradient per parent; :func:`backward` walks the graph once in reverse
topological order and sums contributions at fan-out points.
"""
import contextlib
import math
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError

_state = {
    "grad": True,
    "checked": os.environ.get("PYRCPD_CHECKED", "0") not in ("0", "", "false"),
}


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def checked(enabled=True):
    """Scan every op output (and new tensors) for NaN/Inf while active."""
    prev = _state["checked"]
    _state["checked"] = enabled
    try:
        yield
    finally:
        _state["checked"] = prev


def is_checked():
    return _state["checked"]


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if _state["checked"]:
            _check_finite(arr, name or "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    if _state["checked"]:
        _check_finite(data, f"output of {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    out._op = op
    need = _state["grad"] and any(p.requires_grad for p in parents)
    out.requires_grad = need
    if need:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ------------------------------------------------------------------ graph


@dataclass
class Node:
    op: str
    inputs: tuple
    output: int
    tensor: Tensor


class Graph:
    """Topologically ordered view of the ops that produced ``output``."""

    def __init__(self, output):
        self.output = output
        order = []
        seen = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.tensors = order
        self.nodes = [
            Node(t._op, tuple(id(p) for p in t._parents), id(t), t)
            for t in order
            if t._backward is not None
        ]

    def backward(self):
        out = self.output
        if out.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {out.shape}")
        grads = {id(out): np.ones_like(out.data)}
        for t in reversed(self.tensors):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._backward is None:
                if t.requires_grad:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += g
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that
    requires grad. ``loss`` must hold exactly one element."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Graph(loss).backward()


# ----------------------------------------------------------- elementwise


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise DimensionError(str(e)) from None

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), bw, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise DimensionError(str(e)) from None

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), bw, "mul")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a):
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a):
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a):
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tsum(a, axis=None):
    data = np.sum(a.data, axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(data, dtype=np.float64), (a,), bw, "sum")


def mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


# ------------------------------------------------------------- structure


def matmul(x, w):
    """``x[..., n] @ w[n, m]``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"matmul: {x.shape} @ {w.shape}")
    data = x.data @ w.data

    def bw(g):
        dx = g @ w.data.T
        dw = x.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1])
        return dx, dw

    return _make(data, (x, w), bw, "matmul")


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, key):
    data = a.data[key]

    def bw(g):
        out = np.zeros_like(a.data)
        out[key] = g
        return (out,)

    return _make(np.array(data, dtype=np.float64), (a,), bw, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, tuple(tensors), bw, "concat")


def gather_time(a, index):
    """Select frames ``index`` along the time axis (-2)."""
    index = np.asarray(index, dtype=np.intp)
    data = np.take(a.data, index, axis=-2)

    def bw(g):
        out = np.zeros_like(a.data)
        if a.ndim == 2:
            np.add.at(out, index, g)
        else:
            np.add.at(out, (slice(None), index), g)
        return (out,)

    return _make(data, (a,), bw, "gather_time")


def stack_mean(tensors):
    """Elementwise mean of equally shaped tensors."""
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError(f"stack_mean: {t.shape} vs {shape}")
    n = len(tensors)
    data = sum(t.data for t in tensors) / n
    return _make(data, tuple(tensors), lambda g: tuple(g / n for _ in tensors), "stack_mean")


# ------------------------------------------------------------ sequences


def _batched(arr):
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim == 3:
        return arr, False
    raise DimensionError(f"expected (T, c) or (B, T, c), got {arr.shape}")


def _conv_geometry(T, tau, stride, padding):
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding == "same":
        left = tau // 2
        t_out = -(-T // stride)
        right = max(0, (t_out - 1) * stride + tau - left - T)
    elif padding == "valid":
        if tau > T:
            raise DimensionError(f"kernel length {tau} exceeds sequence length {T}")
        left = right = 0
        t_out = (T - tau) // stride + 1
    else:
        raise ValueError(f"unknown padding {padding!r}")
    return left, right, t_out


def _im2col(x, tau, stride, padding):
    B, T, c = x.shape
    left, right, t_out = _conv_geometry(T, tau, stride, padding)
    xp = np.zeros((B, left + T + right, c)) if (left or right) else x
    if left or right:
        xp[:, left:left + T] = x
    span = stride * (t_out - 1) + 1
    cols = np.stack([xp[:, j:j + span:stride] for j in range(tau)], axis=2)
    return cols, left, xp.shape[1], t_out


def _col2im(dcols, stride, left, padded_len, T):
    B, t_out, tau, c = dcols.shape
    dxp = np.zeros((B, padded_len, c))
    span = stride * (t_out - 1) + 1
    for j in range(tau):
        dxp[:, j:j + span:stride] += dcols[:, :, j]
    return dxp[:, left:left + T]


def _check_finite_input(arr, op):
    if _state["checked"]:
        _check_finite(arr, f"input of {op}")


def conv1d(x, kernel, stride=1, padding="same"):
    """Cross-correlation ``out[t, o] = sum_{j, v} x[t*stride + j - pad, v] * k[j, v, o]``.

    ``pad`` is ``tau // 2`` for ``same`` (output length ``ceil(T / stride)``)
    and 0 for ``valid``. Out-of-range samples read as zero.
    """
    xd, squeeze = _batched(x.data)
    _check_finite_input(xd, "conv1d")
    if kernel.ndim != 3 or kernel.shape[1] != xd.shape[-1]:
        raise DimensionError(f"conv1d: input {x.shape} vs kernel {kernel.shape}")
    tau, cin, cout = kernel.shape
    B, T, _ = xd.shape
    cols, left, plen, t_out = _im2col(xd, tau, stride, padding)
    cols2 = cols.reshape(B * t_out, tau * cin)
    k2 = kernel.data.reshape(tau * cin, cout)
    out = (cols2 @ k2).reshape(B, t_out, cout)

    def bw(g):
        g3, _ = _batched(g)
        g2 = g3.reshape(B * t_out, cout)
        dk = (cols2.T @ g2).reshape(kernel.shape)
        dx = None
        if x.requires_grad:
            dcols = (g2 @ k2.T).reshape(B, t_out, tau, cin)
            dx = _col2im(dcols, stride, left, plen, T)
            if squeeze:
                dx = dx[0]
        return dx, dk

    return _make(out[0] if squeeze else out, (x, kernel), bw, "conv1d")


def channelwise_conv1d(x, kernels, stride=1, padding="same"):
    """Per-channel cross-correlation: channel v uses ``kernels[:, v]`` only."""
    xd, squeeze = _batched(x.data)
    _check_finite_input(xd, "channelwise_conv1d")
    if kernels.ndim != 2 or kernels.shape[1] != xd.shape[-1]:
        raise DimensionError(f"channelwise_conv1d: input {x.shape} vs kernels {kernels.shape}")
    tau = kernels.shape[0]
    B, T, _ = xd.shape
    cols, left, plen, t_out = _im2col(xd, tau, stride, padding)
    k = kernels.data
    out = np.einsum("btjc,jc->btc", cols, k)

    def bw(g):
        g3, _ = _batched(g)
        dk = np.einsum("btjc,btc->jc", cols, g3)
        dx = None
        if x.requires_grad:
            dcols = g3[:, :, None, :] * k[None, None]
            dx = _col2im(dcols, stride, left, plen, T)
            if squeeze:
                dx = dx[0]
        return dx, dk

    return _make(out[0] if squeeze else out, (x, kernels), bw, "channelwise_conv1d")


def downsample(x, factor):
    """Keep every ``factor``-th frame starting at 0: length ``ceil(T/factor)``."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsample factor must be a positive int, got {factor}")
    factor = int(factor)
    if factor == 1:
        return x
    idx = np.arange(0, x.shape[-2], factor)
    out = gather_time(x, idx)
    out._op = "downsample"
    return out


def max_pool1d(x, size):
    """Non-overlapping max pool along time (window = stride = ``size``).

    A trailing partial window is pooled over the frames it has, so the output
    length is ``ceil(T / size)``. Ties route the gradient to the first maximum.
    """
    xd, squeeze = _batched(x.data)
    B, T, c = xd.shape
    t_out = -(-T // size)
    if t_out * size != T:
        xp = np.full((B, t_out * size, c), -np.inf)
        xp[:, :T] = xd
    else:
        xp = xd
    win = xp.reshape(B, t_out, size, c)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def bw(g):
        g3, _ = _batched(g)
        dwin = np.zeros((B, t_out, size, c))
        np.put_along_axis(dwin, arg[:, :, None, :], g3[:, :, None, :], axis=2)
        dx = dwin.reshape(B, t_out * size, c)[:, :T]
        return (dx[0] if squeeze else dx,)

    return _make(out[0] if squeeze else out, (x,), bw, "max_pool1d")


def upsample_nearest(x, factor, length):
    """Repeat each frame ``factor`` times, then cut or right-pad (repeating
    the last frame) to exactly ``length`` frames."""
    idx = np.minimum(np.arange(length) // factor, x.shape[-2] - 1)
    out = gather_time(x, idx)
    out._op = "upsample_nearest"
    return out


def _time_major(arr):
    return np.ascontiguousarray(np.swapaxes(arr, 0, 1))


def lstm_sequence(z, wh):
    """Run an LSTM from zero state over pre-projected inputs.

    ``z`` is ``(B, T, 4H)`` (or ``(T, 4H)``) holding ``x_t W_x + b`` with gate
    blocks ``[input, forget, candidate, output]``; ``wh`` is ``(H, 4H)``.
    Returns the hidden states ``(B, T, H)``.
    """
    zd, squeeze = _batched(z.data)
    H = wh.shape[0]
    if wh.shape != (H, 4 * H) or zd.shape[-1] != 4 * H:
        raise DimensionError(f"lstm_sequence: z {z.shape} vs wh {wh.shape}")
    whd = np.ascontiguousarray(wh.data)
    hs, cs, acts = kernels.lstm_forward(_time_major(zd), whd)
    out = np.swapaxes(hs, 0, 1)

    def bw(g):
        g3, _ = _batched(g)
        dz, dwh = kernels.lstm_backward(_time_major(g3), hs, cs, acts, whd)
        dz = np.swapaxes(dz, 0, 1)
        return (dz[0] if squeeze else dz), dwh

    return _make(out[0] if squeeze else np.ascontiguousarray(out), (z, wh), bw, "lstm_sequence")


def relu_rnn_sequence(z, wh):
    """``h_t = relu(z_t + h_{t-1} wh)`` from zero state."""
    zd, squeeze = _batched(z.data)
    H = wh.shape[0]
    if wh.shape != (H, H) or zd.shape[-1] != H:
        raise DimensionError(f"relu_rnn_sequence: z {z.shape} vs wh {wh.shape}")
    whd = np.ascontiguousarray(wh.data)
    hs = kernels.relu_rnn_forward(_time_major(zd), whd)
    out = np.swapaxes(hs, 0, 1)

    def bw(g):
        g3, _ = _batched(g)
        dz, dwh = kernels.relu_rnn_backward(_time_major(g3), hs, whd)
        dz = np.swapaxes(dz, 0, 1)
        return (dz[0] if squeeze else dz), dwh

    return _make(out[0] if squeeze else np.ascontiguousarray(out), (z, wh), bw, "relu_rnn_sequence")


def lstm_step(x, h, cell, wx, wh, b):
    """One LSTM update built from primitive ops. Returns ``(h', cell')``."""
    H = wh.shape[0]
    if wx.shape != (x.shape[-1], 4 * H) or h.shape[-1] != H or cell.shape[-1] != H:
        raise DimensionError("lstm_step: parameter shapes do not match inputs")
    a = matmul(x, wx) + matmul(h, wh) + b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    g = tanh(a[..., 2 * H:3 * H])
    o = sigmoid(a[..., 3 * H:])
    c_new = f * cell + i * g
    return o * tanh(c_new), c_new


# ---------------------------------------------------------------- losses


def bce(y, target, eps=1e-7):
    """Mean binary cross-entropy of probabilities ``y`` against 0/1 targets.

    ``y`` is clamped to ``[eps, 1 - eps]``; the clamp has zero derivative
    outside that band.
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape != y.shape:
        raise DimensionError(f"bce: scores {y.shape} vs targets {t.shape}")
    yc = np.clip(y.data, eps, 1.0 - eps)
    n = yc.size
    loss = -np.mean(t * np.log(yc) + (1.0 - t) * np.log(1.0 - yc))
    inside = (y.data >= eps) & (y.data <= 1.0 - eps)

    def bw(g):
        return (g * inside * (-t / yc + (1.0 - t) / (1.0 - yc)) / n,)

    return _make(np.asarray(loss), (y,), bw, "bce")


def softmax_cross_entropy(logits, labels):
    """Mean of ``-log softmax(logits)[label]`` over all leading positions."""
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    n = picked.size
    loss = -picked.mean()

    def bw(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
        return (g * (p - onehot) / n,)

    return _make(np.asarray(loss), (logits,), bw, "softmax_cross_entropy")


# ------------------------------------------------------------ utilities


def numerical_grad(f, arr, h=1e-6):
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``arr``
    (perturbed in place and restored)."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def numerical_grad_adaptive(f, arr, steps=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6)):
    """Central differences with per-element step selection.

    For each step ``h`` the Richardson combination of ``h`` and ``h/2`` is
    formed; the estimate that agrees best with both neighbours on the step
    ladder wins. Large steps lose when they straddle a kink (ReLU, max-pool),
    small ones when roundoff dominates (a floor of ``eps * |f| / h`` on the
    disagreement keeps a spuriously flat run of tiny steps from winning).
    """
    est = np.stack([(4.0 * numerical_grad(f, arr, h / 2) - numerical_grad(f, arr, h)) / 3.0
                    for h in steps])
    diff = np.abs(np.diff(est, axis=0))
    spread = np.maximum(diff[:-1], diff[1:])  # disagreement with both neighbours
    # roundoff in f can make tiny steps agree spuriously; never trust below it
    noise = 8.0 * np.finfo(np.float64).eps * max(abs(f()), 1.0) / np.asarray(steps[1:-1])
    cost = np.maximum(spread, noise.reshape((-1,) + (1,) * arr.ndim))
    best = np.argmin(cost, axis=0)
    return np.take_along_axis(est[1:-1], best[None], axis=0)[0]


def relative_error(analytic, numeric, floor=1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def fan_in_uniform(rng, shape, fan_in, name=None):
    return Tensor(uniform(rng, shape, 1.0 / math.sqrt(fan_in)), requires_grad=True, name=name)
