"""Minibatch training with Adam, gradient clipping and early stopping."""
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import ChangeEvent, LabeledSeries, activity_targets, make_targets
from .errors import ConfigError, DivergenceError
from .optim import AdamState, adam_step, clip_grad_norm
from .tensor import no_grad, stack_mean

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 4
    max_epochs: int = 50
    patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0
    lam: float = 1.0
    clip_norm: float = 5.0
    target_radius: int = 1
    frozen: list = field(default_factory=list)  # parameter-name prefixes
    max_steps: int = None
    augment: bool = False  # see augment_series

    def validate(self):
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 0.5:
            raise ConfigError("val_fraction must lie in (0, 0.5)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class History:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, clipped_steps
    step_losses: list = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self):
        lines = ["epoch,train_loss,val_loss,clipped_steps"]
        for e in self.epochs:
            lines.append(f"{e['epoch']},{e['train_loss']!r},{e['val_loss']!r},{e['clipped_steps']}")
        return "\n".join(lines) + "\n"


def augment_series(series, rng):
    """Random channel permutation, per-channel sign flip and time reversal.

    The generator picks affected channels uniformly, signs magnitudes at
    random and uses symmetric noise, so each transform maps a sample to an
    equally likely one; events are remapped so the targets stay exact.
    Reversal negates every shift, leaving the series offset by a constant.
    """
    T, c = series.X.shape
    perm = rng.permutation(c)
    sign = rng.choice([-1.0, 1.0], size=c)
    inv = np.argsort(perm)
    X = series.X[:, perm] * sign
    reverse = bool(rng.integers(2)) and all(e.onset >= 1 for e in series.events)
    events = []
    for e in series.events:
        dims = [int(inv[v]) for v in e.dims]
        mags = [m * sign[j] * (-1.0 if reverse else 1.0) for m, j in zip(e.magnitude, dims)]
        onset = e.onset
        if reverse:
            # a step lands at T - onset; a ramp's endpoints swap around T - 1
            onset = T - e.onset if e.duration == 0 else T - 1 - e.onset - e.duration
        order = np.argsort(dims)
        events.append(ChangeEvent(onset, e.duration, tuple(dims[k] for k in order),
                                  tuple(float(mags[k]) for k in order)))
    activity = series.activity
    if reverse:
        X = X[::-1]
        activity = None if activity is None else np.asarray(activity)[::-1]
    return LabeledSeries(np.ascontiguousarray(X), events, activity)


def _batch_arrays(model, batch, radius):
    P = model.granularity
    X = np.stack([s.X for s in batch])
    T = X.shape[1]
    T_out = model.output_length(T)
    y = np.stack([make_targets(s, T_out, T, radius) for s in batch])
    acts = None
    if model.config.head == "multitask" and all(s.activity is not None for s in batch):
        acts = np.stack([activity_targets(s, T_out, P) for s in batch])
    return X, y, acts


def _groups(batch):
    """Split a batch into runs of equal-shape series so they can be stacked."""
    out = {}
    for s in batch:
        out.setdefault(s.X.shape, []).append(s)
    return list(out.values())


def batch_loss(model, batch, config, rng=None):
    """Mean loss over ``batch``; pass ``rng`` to apply :func:`augment_series`."""
    if rng is not None:
        batch = [augment_series(s, rng) for s in batch]
    parts = []
    for g in _groups(batch):
        X, y, acts = _batch_arrays(model, g, config.target_radius)
        parts.append((model.loss(X, y, acts, config.lam), len(g)))
    if len(parts) == 1:
        return parts[0][0]
    total = sum(n for _, n in parts)
    return stack_mean([loss * (n * len(parts) / total) for loss, n in parts])


def series_loss(model, series, config=None):
    config = config or TrainConfig()
    with no_grad():
        X, y, acts = _batch_arrays(model, [series], config.target_radius)
        return float(model.loss(X, y, acts, config.lam).data)


def evaluate_loss(model, series_list, config=None):
    """Mean per-series loss; parameters are not touched."""
    if not series_list:
        raise ValueError("evaluate_loss needs at least one series")
    return float(np.mean([series_loss(model, s, config) for s in series_list]))


def split_validation(n, fraction, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(n * fraction))
    if n >= 2:
        n_val = max(1, n_val)
    else:
        n_val = 0
    return sorted(perm[n_val:].tolist()), sorted(perm[:n_val].tolist())


def train(model, dataset, config=None, on_epoch=None):
    """Fit ``model`` on ``dataset`` (list of LabeledSeries).

    Returns ``(model, history)``; the model carries the parameters of the
    epoch with the lowest validation loss.
    """
    config = (config or TrainConfig()).validate()
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    tr_idx, va_idx = split_validation(len(dataset), config.val_fraction, int(rng.integers(2**32)))
    train_set = [dataset[i] for i in tr_idx]
    val_set = [dataset[i] for i in va_idx] or train_set
    trainable = {
        k: p for k, p in model.params.items()
        if not any(k.startswith(pre) for pre in config.frozen)
    }
    state = AdamState(lr=config.lr)
    history = History()
    best = (math.inf, model.state_dict(), 0)
    bad_epochs = 0
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        clipped = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            model.zero_grad()
            loss = batch_loss(model, batch, config, rng if config.augment else None)
            value = float(loss.data)
            step += 1
            if not math.isfinite(value):
                raise DivergenceError(step, value)
            loss.backward()
            grads = {k: p.grad for k, p in trainable.items()}
            if config.clip_norm and clip_grad_norm(grads, config.clip_norm):
                clipped += 1
            adam_step(trainable, grads, state)
            losses.append(value)
            history.step_losses.append(value)
            if config.max_steps is not None and step >= config.max_steps:
                break
        val = evaluate_loss(model, val_set, config)
        if not math.isfinite(val):
            raise DivergenceError(step, val)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_loss": val,
            "clipped_steps": clipped,
        }
        history.epochs.append(row)
        log.info("epoch %d train %.5f val %.5f clipped %d", epoch, row["train_loss"], val, clipped)
        if on_epoch is not None:
            on_epoch(row)
        if val < best[0]:
            best = (val, model.state_dict(), epoch)
            bad_epochs = 0
        else:
            bad_epochs += 1
        if bad_epochs >= config.patience:
            break
        if config.max_steps is not None and step >= config.max_steps:
            break
    model.load_state_dict(best[1])
    history.best_epoch = best[2]
    return model, history
