"""Hot inner loops: recurrent scans and peak suppression.

Each kernel has a numba version (``*_nb``) and a vectorised numpy version
(``*_np``). The unsuffixed names dispatch on :data:`pyrcpd._accel.USE_NUMBA`.
Recurrent kernels work time-major: ``z`` is ``(T, B, G)``.

LSTM gate layout along the last axis is ``[input, forget, candidate, output]``.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --------------------------------------------------------------------- LSTM


def lstm_forward_np(z, wh):
    T, B, G = z.shape
    H = G // 4
    hs = np.zeros((T, B, H))
    cs = np.zeros((T, B, H))
    acts = np.empty((T, B, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        a = z[t] + h @ wh
        i = _sigmoid_np(a[:, :H])
        f = _sigmoid_np(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid_np(a[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        acts[t, :, :H] = i
        acts[t, :, H:2 * H] = f
        acts[t, :, 2 * H:3 * H] = g
        acts[t, :, 3 * H:] = o
        hs[t] = h
        cs[t] = c
    return hs, cs, acts


def lstm_backward_np(dhs, hs, cs, acts, wh):
    T, B, H = hs.shape
    dz = np.empty((T, B, 4 * H))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = acts[t, :, :H]
        f = acts[t, :, H:2 * H]
        g = acts[t, :, 2 * H:3 * H]
        o = acts[t, :, 3 * H:]
        tc = np.tanh(cs[t])
        c_prev = cs[t - 1] if t > 0 else np.zeros((B, H))
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[t, :, :H] = dc * g * i * (1.0 - i)
        dz[t, :, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[t, :, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[t, :, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        if t > 0:
            dwh += hs[t - 1].T @ dz[t]
        dh_next = dz[t] @ wh.T
    return dz, dwh


@njit(cache=True)
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def lstm_forward_nb(z, wh):
    T, B, G = z.shape
    H = G // 4
    hs = np.zeros((T, B, H))
    cs = np.zeros((T, B, H))
    acts = np.empty((T, B, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        a = np.dot(h, wh)
        for b in range(B):
            for j in range(H):
                i = _sig(a[b, j] + z[t, b, j])
                f = _sig(a[b, H + j] + z[t, b, H + j])
                g = np.tanh(a[b, 2 * H + j] + z[t, b, 2 * H + j])
                o = _sig(a[b, 3 * H + j] + z[t, b, 3 * H + j])
                cn = f * c[b, j] + i * g
                c[b, j] = cn
                h[b, j] = o * np.tanh(cn)
                acts[t, b, j] = i
                acts[t, b, H + j] = f
                acts[t, b, 2 * H + j] = g
                acts[t, b, 3 * H + j] = o
                hs[t, b, j] = h[b, j]
                cs[t, b, j] = cn
    return hs, cs, acts


@njit(cache=True)
def lstm_backward_nb(dhs, hs, cs, acts, wh):
    T, B, H = hs.shape
    dz = np.empty((T, B, 4 * H))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    whT = np.ascontiguousarray(wh.T)
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for j in range(H):
                i = acts[t, b, j]
                f = acts[t, b, H + j]
                g = acts[t, b, 2 * H + j]
                o = acts[t, b, 3 * H + j]
                tc = np.tanh(cs[t, b, j])
                c_prev = cs[t - 1, b, j] if t > 0 else 0.0
                dh = dhs[t, b, j] + dh_next[b, j]
                dc = dc_next[b, j] + dh * o * (1.0 - tc * tc)
                dz[t, b, j] = dc * g * i * (1.0 - i)
                dz[t, b, H + j] = dc * c_prev * f * (1.0 - f)
                dz[t, b, 2 * H + j] = dc * i * (1.0 - g * g)
                dz[t, b, 3 * H + j] = dh * tc * o * (1.0 - o)
                dc_next[b, j] = dc * f
        dzt = np.ascontiguousarray(dz[t])
        if t > 0:
            dwh += np.dot(np.ascontiguousarray(hs[t - 1].T), dzt)
        dh_next = np.dot(dzt, whT)
    return dz, dwh


# ------------------------------------------------------------ ReLU RNN


def relu_rnn_forward_np(z, wh):
    T, B, H = z.shape
    hs = np.zeros((T, B, H))
    h = np.zeros((B, H))
    for t in range(T):
        h = np.maximum(z[t] + h @ wh, 0.0)
        hs[t] = h
    return hs


def relu_rnn_backward_np(dhs, hs, wh):
    T, B, H = hs.shape
    dz = np.empty((T, B, H))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dz[t] = (dhs[t] + dh_next) * (hs[t] > 0.0)
        if t > 0:
            dwh += hs[t - 1].T @ dz[t]
        dh_next = dz[t] @ wh.T
    return dz, dwh


@njit(cache=True)
def relu_rnn_forward_nb(z, wh):
    T, B, H = z.shape
    hs = np.zeros((T, B, H))
    h = np.zeros((B, H))
    for t in range(T):
        a = np.dot(h, wh)
        for b in range(B):
            for j in range(H):
                v = a[b, j] + z[t, b, j]
                h[b, j] = v if v > 0.0 else 0.0
                hs[t, b, j] = h[b, j]
    return hs


@njit(cache=True)
def relu_rnn_backward_nb(dhs, hs, wh):
    T, B, H = hs.shape
    dz = np.empty((T, B, H))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((B, H))
    whT = np.ascontiguousarray(wh.T)
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for j in range(H):
                dz[t, b, j] = (dhs[t, b, j] + dh_next[b, j]) if hs[t, b, j] > 0.0 else 0.0
        dzt = np.ascontiguousarray(dz[t])
        if t > 0:
            dwh += np.dot(np.ascontiguousarray(hs[t - 1].T), dzt)
        dh_next = np.dot(dzt, whT)
    return dz, dwh


# ------------------------------------------------------------------ NMS


def nms_mask_np(scores, w):
    """Keep t iff scores[t] beats everything in [t-w, t) strictly and
    is >= everything in (t, t+w]."""
    n = scores.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.bool_)
    pad = np.full(n + 2 * w, -np.inf)
    pad[w:w + n] = scores
    win = np.lib.stride_tricks.sliding_window_view(pad, 2 * w + 1)
    left = win[:, :w].max(axis=1) if w > 0 else np.full(n, -np.inf)
    right = win[:, w + 1:].max(axis=1) if w > 0 else np.full(n, -np.inf)
    return (scores > left) & (scores >= right)


@njit(cache=True)
def nms_mask_nb(scores, w):
    n = scores.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    for t in range(n):
        s = scores[t]
        ok = True
        lo = t - w if t - w > 0 else 0
        for u in range(lo, t):
            if scores[u] >= s:
                ok = False
                break
        if ok:
            hi = t + w if t + w < n - 1 else n - 1
            for u in range(t + 1, hi + 1):
                if scores[u] > s:
                    ok = False
                    break
        keep[t] = ok
    return keep


if USE_NUMBA:
    lstm_forward = lstm_forward_nb
    lstm_backward = lstm_backward_nb
    relu_rnn_forward = relu_rnn_forward_nb
    relu_rnn_backward = relu_rnn_backward_nb
    nms_mask = nms_mask_nb
else:
    lstm_forward = lstm_forward_np
    lstm_backward = lstm_backward_np
    relu_rnn_forward = relu_rnn_forward_np
    relu_rnn_backward = relu_rnn_backward_np
    nms_mask = nms_mask_np
