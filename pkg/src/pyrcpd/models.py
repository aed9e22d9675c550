"""Model assembly (PRN and the CNN/RCN/DWN baselines), heads and losses."""
import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .dwn import DEFAULT_ARCH, cnn_init, cnn_stream, dwn_forward, dwn_fuse, parse_arch
from .errors import ConfigError, DataError, DimensionError
from .prl import prl_forward, prl_init
from .tensor import (
    Tensor,
    as_tensor,
    bce,
    matmul,
    mean,
    no_grad,
    reshape,
    sigmoid,
    softmax_cross_entropy,
)
from .wavelet import nwl_init

KINDS = ("PRN", "DWN", "RCN", "CNN")


@dataclass
class ModelConfig:
    kind: str = "PRN"
    channels: int = 12
    wavelet_depth: int = 7
    wavelet_kernel: int = 3
    ratio: int = 2
    min_length: int = 4
    cnn_arch: str = DEFAULT_ARCH
    cell: str = "lstm"
    n_h: int = 256
    head: str = "binary"  # or "multitask"
    n_outputs: int = 1  # N = activities + 1 for the multitask head
    share_rnn: bool = True
    fuse_levels: bool = False  # PRN only: mean-fuse instead of the pyramid RNN
    center: bool = True  # subtract each series' per-variable mean before the network
    seed: int = 0

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if self.head not in ("binary", "multitask"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.head == "binary" and self.n_outputs != 1:
            raise ConfigError("binary head has exactly one output")
        if self.head == "multitask" and self.n_outputs < 2:
            raise ConfigError("multitask head needs N >= 2 outputs")
        if self.cell not in ("lstm", "simple"):
            raise ConfigError(f"unknown cell {self.cell!r}")
        if self.wavelet_depth < 1 or self.wavelet_kernel < 2 or self.ratio < 2:
            raise ConfigError("need wavelet_depth >= 1, wavelet_kernel >= 2, ratio >= 2")
        if self.n_h < 1:
            raise ConfigError("n_h must be >= 1")
        parse_arch(self.cnn_arch)
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class HeadParams:
    W_o: Tensor
    b_o: Tensor

    @property
    def out(self):
        return self.W_o.shape[1]


def detect_head(h_seq, params):
    """Per-step change probability ``sigmoid(h W_o + b_o)`` from the last
    output unit."""
    h_seq = as_tensor(h_seq)
    if h_seq.shape[-1] != params.W_o.shape[0]:
        raise DimensionError(f"head expects width {params.W_o.shape[0]}, got {h_seq.shape[-1]}")
    a = matmul(h_seq, params.W_o) + params.b_o
    return sigmoid(a[..., -1])


def head_logits(h_seq, params):
    return matmul(h_seq, params.W_o) + params.b_o


def bce_loss(y, y_star):
    return bce(as_tensor(y), y_star)


def multitask_loss(activity_logits, change_scores, activity_targets, change_targets, lam=1.0):
    """Change BCE plus ``lam`` times softmax cross-entropy over activities."""
    labels = np.asarray(activity_targets)
    n_cls = activity_logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise DataError(f"activity label out of range [0, {n_cls})")
    loss = bce_loss(change_scores, change_targets)
    if lam != 0.0:
        loss = loss + lam * softmax_cross_entropy(activity_logits, labels)
    return loss


class Model:
    """A built network. ``params`` maps stable names to leaf tensors."""

    def __init__(self, config, params, parts):
        self.config = config
        self.params = params
        self._parts = parts

    @property
    def granularity(self):
        """Input frames per output score (``P``)."""
        return self._parts["cnn"].total_stride

    def output_length(self, T):
        return -(-T // self.granularity)

    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def features(self, X):
        cfg = self.config
        parts = self._parts
        X = as_tensor(X)
        if X.shape[-1] != cfg.channels:
            raise DimensionError(f"model expects {cfg.channels} variables, got {X.shape[-1]}")
        if cfg.center:
            X = X - reshape(mean(X, axis=-2), X.shape[:-2] + (1, X.shape[-1]))
        if cfg.kind == "CNN":
            return cnn_stream(X, parts["cnn"])
        if cfg.kind == "RCN":
            return prl_forward([cnn_stream(X, parts["cnn"])], parts["rnn"])
        pyr = dwn_forward(X, parts["nwl"], parts["cnn"])
        if cfg.kind == "DWN" or cfg.fuse_levels:
            return dwn_fuse(pyr, cfg.ratio)
        return prl_forward(pyr, parts["rnn"])

    def forward(self, X):
        """Return ``(scores, activity_logits)``; logits are None for the
        binary head."""
        h = self.features(X)
        head = self._parts["head"]
        if self.config.head == "binary":
            return detect_head(h, head), None
        a = head_logits(h, head)
        return sigmoid(a[..., -1]), a[..., :-1]

    def scores(self, X):
        with no_grad():
            return self.forward(X)[0].data

    def loss(self, X, targets, activity_targets=None, lam=1.0):
        y, logits = self.forward(X)
        if logits is None or activity_targets is None:
            return bce_loss(y, targets)
        return multitask_loss(logits, y, activity_targets, targets, lam)

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ConfigError(f"checkpoint shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def build_model(config):
    cfg = config.validate()
    rng = np.random.default_rng(cfg.seed)
    arch = parse_arch(cfg.cnn_arch)
    parts = {}
    params = {}
    if cfg.kind in ("DWN", "PRN"):
        nwl = nwl_init(cfg.channels, cfg.wavelet_kernel, cfg.wavelet_depth,
                       int(rng.integers(2**32)), cfg.ratio, cfg.min_length)
        parts["nwl"] = nwl
        params.update(nwl.tensors())
    cnn = cnn_init(cfg.channels, arch, rng)
    parts["cnn"] = cnn
    params.update(cnn.tensors())
    width = cnn.out_width
    if cfg.kind == "RCN" or (cfg.kind == "PRN" and not cfg.fuse_levels):
        top_down = cfg.kind == "PRN"
        rnn = prl_init(width, cfg.n_h, rng, cell=cfg.cell, d=cfg.ratio,
                       shared=cfg.share_rnn or not top_down,
                       levels=cfg.wavelet_depth, top_down=top_down)
        parts["rnn"] = rnn
        params.update(rnn.tensors("prl." if top_down else "rnn."))
        width = cfg.n_h
    bound = 1.0 / math.sqrt(width)
    head = HeadParams(
        Tensor(rng.uniform(-bound, bound, (width, cfg.n_outputs)), requires_grad=True),
        Tensor(np.zeros(cfg.n_outputs), requires_grad=True),
    )
    parts["head"] = head
    params["head.W_o"] = head.W_o
    params["head.b_o"] = head.b_o
    for name, p in params.items():
        p.name = name
    return Model(cfg, params, parts)


def save_model(model, path):
    """Write ``path`` (PRN1 tensors) and ``path + '.json'`` (config)."""
    checkpoint.save(path, model.params)
    with open(str(path) + ".json", "w") as fh:
        json.dump({"format": "PRN1", "model": model.config.to_dict()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    try:
        with open(str(path) + ".json") as fh:
            header = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"missing config header {path}.json") from None
    model = build_model(ModelConfig.from_dict(header["model"]))
    model.load_state_dict(checkpoint.load(path))
    return model
