"""Peak suppression, tolerance matching and PR-AUC over a corpus.

Scores live at output resolution; output step ``t`` maps to input time
``t * stride + stride // 2``. A detection matches a true change when they are
at most ``eta`` input steps apart; pairs are taken greedily nearest first and
each truth is used at most once.

The reported AUC is the area under the precision-recall curve: thresholds
sweep every distinct post-suppression score; precision is replaced by its
upper envelope ``max{p : recall >= r}``, anchored at recall 0, and integrated
with the trapezoid rule over recall.
"""
import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DataError


@dataclass
class EvalConfig:
    nms_window: int = 4
    etas: tuple = (8, 16, 32, 64, 128, 256, 512)
    window_candidates: tuple = (4, 8, 16, 32)
    detect_threshold: float = 0.5

    def validate(self):
        if self.nms_window < 1:
            raise ConfigError("nms_window must be >= 1")
        if any(e < 0 for e in self.etas):
            raise ConfigError("tolerances must be >= 0")
        return self


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list

    @property
    def precision(self):
        n = self.tp + self.fp
        return self.tp / n if n else 1.0

    @property
    def recall(self):
        n = self.tp + self.fn
        return self.tp / n if n else 1.0


@dataclass
class DetectionReport:
    eta: int
    auc: float
    precision: np.ndarray
    recall: np.ndarray
    thresholds: np.ndarray
    pairs: list = field(default_factory=list)
    n_truths: int = 0

    def to_dict(self):
        return {
            "eta": int(self.eta),
            "auc": float(self.auc),
            "n_truths": int(self.n_truths),
            "points": [
                {"threshold": float(th), "precision": float(p), "recall": float(r)}
                for th, p, r in zip(self.thresholds, self.precision, self.recall)
            ],
            "pairs": [[int(a), int(b)] for a, b in self.pairs],
        }


def nms(scores, window):
    """Indices whose score strictly beats the ``window`` frames before it and
    is not beaten by the ``window`` frames after it (ties go to the earlier
    index). Returns ``[(index, score), ...]`` sorted by index."""
    if window < 1:
        raise ValueError("nms window must be >= 1")
    s = np.ascontiguousarray(scores, dtype=np.float64)
    keep = kernels.nms_mask(s, int(window))
    idx = np.flatnonzero(keep)
    return [(int(i), float(s[i])) for i in idx]


def to_input_time(indices, stride):
    return np.asarray(indices, dtype=np.int64) * stride + stride // 2


def match(detections, truths, eta):
    """Greedy nearest-first matching. Returns a :class:`MatchResult` whose
    ``pairs`` are ``(detection_index, truth_index)`` positions."""
    det = np.asarray(detections, dtype=np.int64)
    tru = np.asarray(truths, dtype=np.int64)
    if det.size == 0 or tru.size == 0:
        return MatchResult(0, int(det.size), int(tru.size), [])
    order_t = np.argsort(tru, kind="stable")
    sorted_t = tru[order_t]
    lo = np.searchsorted(sorted_t, det - eta, side="left")
    hi = np.searchsorted(sorted_t, det + eta, side="right")
    counts = hi - lo
    di = np.repeat(np.arange(det.size), counts)
    if di.size == 0:
        return MatchResult(0, int(det.size), int(tru.size), [])
    offs = np.arange(di.size) - np.repeat(np.cumsum(counts) - counts, counts)
    tj = order_t[np.repeat(lo, counts) + offs]
    dist = np.abs(det[di] - tru[tj])
    order = np.lexsort((tj, di, dist))
    used_d = np.zeros(det.size, dtype=bool)
    used_t = np.zeros(tru.size, dtype=bool)
    pairs = []
    for k in order:
        a, b = di[k], tj[k]
        if not used_d[a] and not used_t[b]:
            used_d[a] = used_t[b] = True
            pairs.append((int(a), int(b)))
    tp = len(pairs)
    return MatchResult(tp, int(det.size) - tp, int(tru.size) - tp, sorted(pairs))


def pr_area(precision, recall):
    """Trapezoid area under the precision envelope, anchored at recall 0."""
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    if p.size == 0:
        return 0.0
    rs = np.unique(r)
    env = np.empty(rs.size)
    for j, rv in enumerate(rs):
        env[j] = p[r >= rv].max()
    xs = np.concatenate([[0.0], rs])
    ys = np.concatenate([[env[0]], env])
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0))


def _series_peaks(scores, window):
    peaks = nms(scores, window)
    if not peaks:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    idx, val = zip(*peaks)
    return np.asarray(idx, dtype=np.int64), np.asarray(val)


def auc(scores, truths, eta, nms_window, stride=1):
    """PR-AUC of per-series ``scores`` against per-series input-time
    ``truths`` at tolerance ``eta``. Returns a :class:`DetectionReport`."""
    if len(scores) != len(truths):
        raise DataError("one truth list per score series")
    n_truths = sum(len(t) for t in truths)
    if n_truths == 0:
        raise DataError("recall is undefined without any true changes")
    rows = []  # (score, series, rank within series)
    tp_tables = []
    all_pairs = []
    for s, (sc, tr) in enumerate(zip(scores, truths)):
        idx, val = _series_peaks(np.asarray(sc, dtype=np.float64), nms_window)
        times = to_input_time(idx, stride)
        order = np.lexsort((idx, -val))
        table = [0]
        for j in range(1, order.size + 1):
            table.append(match(np.sort(times[order[:j]]), tr, eta).tp)
        tp_tables.append(table)
        for rank, k in enumerate(order, start=1):
            rows.append((val[k], s, rank))
        full = match(times, tr, eta)
        all_pairs.extend((int(times[a]), int(tr[b])) for a, b in full.pairs)
    if not rows:
        return DetectionReport(eta, 0.0, np.zeros(0), np.zeros(0), np.zeros(0), all_pairs, n_truths)
    rows.sort(key=lambda x: (-x[0], x[1], x[2]))
    vals = np.array([r[0] for r in rows])
    delta = np.array([tp_tables[s][j] - tp_tables[s][j - 1] for _, s, j in rows], dtype=np.int64)
    tp = np.cumsum(delta)
    ndet = np.arange(1, len(rows) + 1)
    last = np.flatnonzero(np.r_[vals[1:] != vals[:-1], True])
    precision = tp[last] / ndet[last]
    recall = tp[last] / n_truths
    return DetectionReport(eta, pr_area(precision, recall), precision, recall, vals[last], all_pairs, n_truths)


def random_scores(lengths, seed):
    rng = np.random.default_rng(seed)
    return [rng.random(n) for n in lengths]


def tune_nms_window(scores, truths, eta, stride, candidates=(4, 8, 16, 32)):
    """Candidate window with the best AUC (ties to the smaller window)."""
    best = None
    for w in candidates:
        a = auc(scores, truths, eta, w, stride).auc
        if best is None or a > best[1]:
            best = (w, a)
    return best[0]


def report_json(reports, **meta):
    doc = dict(meta)
    doc["metric"] = "pr_auc"
    doc["results"] = [r.to_dict() for r in reports]
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def auc_table_csv(table, etas):
    """``table`` maps method -> {eta: auc}; rows are tolerances."""
    methods = list(table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eta"] + methods)
    for eta in etas:
        w.writerow([eta] + [f"{table[m][eta]:.6f}" for m in methods])
    return buf.getvalue()
