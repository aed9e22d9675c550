"""Synthetic multi-scale changepoint series, targets, splits and CSV I/O.

A series is a per-variable Brownian walk plus white noise plus a piecewise
linear mean: each event ramps the mean of a few variables from its current
level by ``magnitude`` over ``duration`` steps (a step when duration is 0).
"""
import csv
import dataclasses
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, GenerationError, ParseError

log = logging.getLogger(__name__)

SPLITS = ("mixed", "abrupt_train_gradual_test", "gradual_train_abrupt_test")
_MASK = (1 << 64) - 1


def splitmix64(state):
    """One splitmix64 step: returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def derive_seeds(master, n):
    out = []
    state = master & _MASK
    for _ in range(n):
        state, z = splitmix64(state)
        out.append(z)
    return out


@dataclass(frozen=True)
class ChangeEvent:
    onset: int
    duration: int
    dims: tuple
    magnitude: tuple

    def __post_init__(self):
        if not self.dims:
            raise DataError("change event must affect at least one variable")
        if self.duration < 0 or self.onset < 0:
            raise DataError("onset and duration must be non-negative")
        if len(self.magnitude) != len(self.dims):
            raise DataError("one magnitude per affected variable")

    @property
    def end(self):
        return self.onset + self.duration

    @property
    def center(self):
        """Transition midpoint in input time (floored)."""
        return (2 * self.onset + self.duration) // 2

    def to_dict(self):
        return {
            "onset": int(self.onset),
            "duration": int(self.duration),
            "dims": [int(v) for v in self.dims],
            "magnitude": [float(m) for m in self.magnitude],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["onset"]), int(d["duration"]), tuple(d["dims"]), tuple(d["magnitude"]))


@dataclass
class LabeledSeries:
    X: np.ndarray
    events: list
    activity: np.ndarray = None
    mean: np.ndarray = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError(f"series must be (T, c), got {self.X.shape}")
        T = self.X.shape[0]
        self.events = sorted(self.events, key=lambda e: e.onset)
        for e in self.events:
            if e.end >= T:
                raise DataError(f"event at {e.onset} (+{e.duration}) runs past T={T}")
            if max(e.dims) >= self.X.shape[1]:
                raise DataError(f"event touches variable {max(e.dims)} of {self.X.shape[1]}")
        for a, b in zip(self.events, self.events[1:]):
            if b.onset <= a.end:
                raise DataError(f"events at {a.onset} and {b.onset} overlap")

    @property
    def T(self):
        return self.X.shape[0]

    @property
    def truths(self):
        return [e.center for e in self.events]


@dataclass
class DatasetSpec:
    n_series: int = 400
    T: int = 1024
    c: int = 4
    n_events: int = 2
    d_min: int = 0
    d_max: int = 256
    min_gap: int = None  # defaults to d_max
    dims_per_event: int = 2
    magnitude_min: float = 1.0
    magnitude_max: float = 3.0
    noise: float = 1.0
    brownian: float = 0.1
    split: str = "mixed"
    duration_threshold: int = 64
    seed: int = 0

    @property
    def gap(self):
        return self.d_max if self.min_gap is None else self.min_gap

    def validate(self):
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.n_series < 0 or self.T < 1 or self.c < 1 or self.n_events < 0:
            raise ConfigError("n_series, T, c, n_events must be non-negative (T, c >= 1)")
        if not 0 <= self.d_min <= self.d_max:
            raise ConfigError("need 0 <= d_min <= d_max")
        if not 1 <= self.dims_per_event <= self.c:
            raise ConfigError("dims_per_event must lie in [1, c]")
        if self.split != "mixed" and not self.d_min < self.duration_threshold <= self.d_max:
            raise ConfigError("duration_threshold must lie in (d_min, d_max]")
        if self.noise < 0 or self.brownian < 0:
            raise ConfigError("noise scales must be non-negative")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown data config keys: {sorted(unknown)}")
        return cls(**d).validate()


def mean_trajectory(T, c, events):
    mean = np.zeros((T, c))
    t = np.arange(T, dtype=np.float64)
    for e in events:
        if e.duration == 0:
            ramp = (t >= e.onset).astype(np.float64)
        else:
            ramp = np.clip((t - e.onset) / e.duration, 0.0, 1.0)
        for v, m in zip(e.dims, e.magnitude):
            mean[:, v] += m * ramp
    return mean


def _place(rng, T, durations, gap, tries=1000):
    n = len(durations)
    if n == 0:
        return []
    for _ in range(tries):
        onsets = [int(rng.integers(1, T - d)) for d in durations]
        order = np.argsort(onsets, kind="stable")
        ok = all(
            onsets[b] - (onsets[a] + durations[a]) >= gap
            for a, b in zip(order, order[1:])
        )
        if ok:
            return [(onsets[i], durations[i]) for i in order]
    raise GenerationError(f"could not place {n} events in T={T} after {tries} tries")


def gen_series(spec, seed, duration_range=None):
    """One labeled series. ``duration_range`` overrides ``[d_min, d_max]``."""
    lo, hi = duration_range if duration_range is not None else (spec.d_min, spec.d_max)
    if spec.T < spec.n_events * (spec.d_max + spec.gap):
        raise GenerationError(
            f"T={spec.T} cannot hold {spec.n_events} events with duration <= {spec.d_max} "
            f"and gap {spec.gap}"
        )
    rng = np.random.default_rng(seed)
    durations = [int(d) for d in rng.integers(lo, hi + 1, size=spec.n_events)]
    placed = _place(rng, spec.T, durations, spec.gap)
    events = []
    for onset, dur in placed:
        dims = np.sort(rng.choice(spec.c, size=spec.dims_per_event, replace=False))
        size = rng.uniform(spec.magnitude_min, spec.magnitude_max, size=len(dims))
        sign = rng.choice([-1.0, 1.0], size=len(dims))
        mags = tuple(float(m) for m in size * sign)
        events.append(ChangeEvent(onset, dur, tuple(int(v) for v in dims), mags))
    mean = mean_trajectory(spec.T, spec.c, events)
    walk = np.cumsum(rng.normal(0.0, spec.brownian, size=(spec.T, spec.c)), axis=0)
    noise = rng.normal(0.0, spec.noise, size=(spec.T, spec.c))
    return LabeledSeries(mean + walk + noise, events, mean=mean)


def make_targets(series, T_out, T=None, radius=1):
    """0/1 vector of length ``T_out`` with ones at each event's transition
    midpoint mapped to output resolution, widened by ``radius``."""
    T = series.T if T is None else T
    y = np.zeros(T_out)
    for e in series.events:
        anchor = ((2 * e.onset + e.duration) * T_out) // (2 * T)
        if not 0 <= anchor < T_out:
            raise DataError(f"event at {e.onset} maps outside the {T_out}-step output")
        y[max(0, anchor - radius):anchor + radius + 1] = 1.0
    return y


def activity_targets(series, T_out, stride):
    """Activity label at the center of each output window."""
    if series.activity is None:
        return None
    idx = np.minimum(np.arange(T_out) * stride + stride // 2, series.T - 1)
    return np.asarray(series.activity)[idx]


def _workers(n_jobs):
    cap = int(os.environ.get("PYRCPD_THREADS", "0") or 0)
    n = max(1, n_jobs or 1)
    return min(n, cap) if cap > 0 else n


def gen_dataset(spec, n_jobs=1):
    """Return ``(train, test)`` lists of :class:`LabeledSeries`."""
    spec.validate()
    n = spec.n_series
    n_train = n // 2
    seeds = derive_seeds(spec.seed, n)
    thr = spec.duration_threshold
    low = (spec.d_min, thr - 1)
    high = (thr, spec.d_max)
    if spec.split == "mixed":
        ranges = [None] * n
    elif spec.split == "abrupt_train_gradual_test":
        ranges = [low] * n_train + [high] * (n - n_train)
    else:
        ranges = [high] * n_train + [low] * (n - n_train)

    def one(i):
        return gen_series(spec, seeds[i], ranges[i])

    workers = _workers(n_jobs)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            series = list(ex.map(one, range(n)))
    else:
        series = [one(i) for i in range(n)]
    if spec.split == "mixed":
        perm = np.random.default_rng(derive_seeds(spec.seed ^ 0x5EED, 1)[0]).permutation(n)
        train = [series[i] for i in sorted(perm[:n_train])]
        test = [series[i] for i in sorted(perm[n_train:])]
        return train, test
    return series[:n_train], series[n_train:]


# ------------------------------------------------------------------- CSV


def _parse_float(cell, row, col):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric cell {cell!r}", row, col) from None
    return v


def load_csv(path, label_column=None):
    """Read a rectangular numeric CSV. A non-numeric first row is a header.

    ``label_column`` (index or header name) holds integer activity labels;
    every label transition becomes an abrupt event touching all variables.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    if not rows:
        raise ParseError(f"empty CSV {path}")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise ParseError(f"no data rows in {path}")
    width = len(rows[0]) if header is None else len(header)
    label_idx = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if header is None or label_column not in header:
                raise ParseError(f"label column {label_column!r} not found")
            label_idx = header.index(label_column)
        else:
            label_idx = int(label_column) % width
    first = 2 if header is not None else 1
    values = np.empty((len(rows), width))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"expected {width} columns, found {len(row)}", r + first)
        for c, cell in enumerate(row):
            values[r, c] = _parse_float(cell.strip(), r + first, c + 1)
    labels = None
    if label_idx is not None:
        raw = values[:, label_idx]
        if np.any(raw != np.round(raw)):
            bad = int(np.flatnonzero(raw != np.round(raw))[0])
            raise ParseError("label must be an integer", bad + first, label_idx + 1)
        labels = raw.astype(np.int64)
        values = np.delete(values, label_idx, axis=1)
    if values.shape[1] == 0:
        raise ParseError("no feature columns")
    c = values.shape[1]
    events = []
    if labels is not None:
        for t in np.flatnonzero(labels[1:] != labels[:-1]) + 1:
            events.append(ChangeEvent(int(t), 0, tuple(range(c)), (0.0,) * c))
    return LabeledSeries(values, events, activity=labels)


# --------------------------------------------------------------- archive


def _series_csv(s):
    c = s.X.shape[1]
    cols = [f"x{v}" for v in range(c)]
    data = s.X
    fmt = ["%.17g"] * c
    if s.activity is not None:
        cols.append("label")
        data = np.column_stack([data, s.activity])
        fmt.append("%d")
    lines = [",".join(cols)]
    lines.extend(",".join(f % v for f, v in zip(fmt, row)) for row in data.tolist())
    return "\n".join(lines) + "\n"


def write_archive(out_dir, train, test, spec=None, extra=None):
    """``series-NNNN.csv`` + ``events-NNNN.json`` per series, plus
    ``manifest.json`` listing the train and test ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = list(train) + list(test)
    if not series:
        log.warning("writing an archive with no series")
    for i, s in enumerate(series):
        (out / f"series-{i:04d}.csv").write_text(_series_csv(s))
        events = [e.to_dict() for e in s.events]
        (out / f"events-{i:04d}.json").write_text(json.dumps(events, sort_keys=True) + "\n")
    manifest = {
        "format": 1,
        "seed": None if spec is None else spec.seed,
        "spec": None if spec is None else spec.to_dict(),
        "train": list(range(len(train))),
        "test": list(range(len(train), len(series))),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_archive(path):
    """Return ``(train, test, manifest)``."""
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"no dataset archive at {root} (missing manifest.json)")
    manifest = json.loads(mpath.read_text())

    def one(i):
        p = root / f"series-{i:04d}.csv"
        with open(p, encoding="utf-8") as fh:
            has_label = fh.readline().strip().split(",")[-1] == "label"
        s = load_csv(p, label_column="label" if has_label else None)
        events = [ChangeEvent.from_dict(d) for d in json.loads((root / f"events-{i:04d}.json").read_text())]
        return LabeledSeries(s.X, events, activity=s.activity)

    return [one(i) for i in manifest["train"]], [one(i) for i in manifest["test"]], manifest
