"""Slow, obviously-correct reference implementations used only by tests."""
import itertools

import numpy as np


def nms_brute(scores, w):
    out = []
    n = len(scores)
    for t in range(n):
        left = scores[max(0, t - w):t]
        right = scores[t + 1:min(n, t + w + 1)]
        if all(scores[t] > v for v in left) and all(scores[t] >= v for v in right):
            out.append((t, float(scores[t])))
    return out


def match_brute(dets, truths, eta):
    """Greedy by (distance, detection position, truth position) via a full
    sort of every pair."""
    pairs = sorted(
        (abs(d - t), i, j)
        for i, d in enumerate(dets)
        for j, t in enumerate(truths)
        if abs(d - t) <= eta
    )
    ud, ut, out = set(), set(), []
    for _, i, j in pairs:
        if i not in ud and j not in ut:
            ud.add(i)
            ut.add(j)
            out.append((i, j))
    tp = len(out)
    return tp, len(dets) - tp, len(truths) - tp, sorted(out)


def max_matching_size(dets, truths, eta):
    """Exhaustive maximum cardinality of a within-eta one-to-one matching."""
    best = 0
    n = min(len(dets), len(truths))
    for k in range(n, 0, -1):
        for ds in itertools.combinations(range(len(dets)), k):
            for ts in itertools.permutations(range(len(truths)), k):
                if all(abs(dets[a] - truths[b]) <= eta for a, b in zip(ds, ts)):
                    return k
    return best


def envelope_area(points):
    """Trapezoid area under max{p : r' >= r}, starting flat from recall 0."""
    rs = sorted({r for _, r in points})
    env = [max(p for p, r2 in points if r2 >= r) for r in rs]
    area = 0.0
    prev_r, prev_p = 0.0, env[0]
    for r, p in zip(rs, env):
        area += (r - prev_r) * (p + prev_p) / 2.0
        prev_r, prev_p = r, p
    return area


def auc_brute(scores, truths, eta, w, stride):
    """Rerun suppression and matching from scratch at every threshold."""
    peaks = [nms_brute(list(s), w) for s in scores]
    n_truths = sum(len(t) for t in truths)
    thresholds = sorted({v for pk in peaks for _, v in pk}, reverse=True)
    points = []
    for th in thresholds:
        tp = nd = 0
        for pk, tr in zip(peaks, truths):
            dets = [i * stride + stride // 2 for i, v in pk if v >= th]
            nd += len(dets)
            tp += match_brute(dets, list(tr), eta)[0]
        points.append((tp / nd, tp / n_truths))
    if not points:
        return 0.0
    return envelope_area(points)


def conv1d_direct(x, k, stride=1, padding="same"):
    """Direct summation; x (T, cin), k (tau, cin, cout)."""
    T, cin = x.shape
    tau, _, cout = k.shape
    if padding == "same":
        Tout = -(-T // stride)
        left = tau // 2
    else:
        Tout = (T - tau) // stride + 1
        left = 0
    out = np.zeros((Tout, cout))
    for t in range(Tout):
        for j in range(tau):
            s = t * stride + j - left
            if 0 <= s < T:
                for v in range(cin):
                    out[t] += x[s, v] * k[j, v]
    return out


def lstm_reference(xs, wx, wh, b):
    """Textbook LSTM, gates [i, f, g, o]; xs (T, n_in)."""
    H = wh.shape[0]
    h = np.zeros(H)
    c = np.zeros(H)
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))
    out = []
    for x in xs:
        a = x @ wx + h @ wh + b
        i, f, g, o = sig(a[:H]), sig(a[H:2 * H]), np.tanh(a[2 * H:3 * H]), sig(a[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out)
