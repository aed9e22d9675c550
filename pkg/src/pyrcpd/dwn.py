"""Shared-weight CNN streams over pyramid levels, and mean fusion."""
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInputError, DimensionError
from .tensor import Tensor, conv1d, fan_in_uniform, max_pool1d, relu, stack_mean, upsample_nearest
from .wavelet import NwlParams, Pyramid, nwl_forward

DEFAULT_ARCH = "[9:128:4],[5:128:2],[5:128:2]"


class LevelTooShortError(DegenerateInputError):
    pass


def parse_arch(spec):
    """``"[9:128:4],[5:128:2]"`` -> ``[(9, 128, 4), (5, 128, 2)]``
    (kernel size, feature maps, pooling stride)."""
    if not isinstance(spec, str):
        return [tuple(int(v) for v in layer) for layer in spec]
    layers = re.findall(r"\[\s*(\d+)\s*:\s*(\d+)\s*:\s*(\d+)\s*\]", spec)
    if not layers or re.sub(r"[\s,]", "", re.sub(r"\[[^\]]*\]", "", spec)):
        raise ConfigError(f"bad CNN architecture string {spec!r}")
    return [tuple(int(v) for v in layer) for layer in layers]


@dataclass
class CnnParams:
    layers: list
    weights: list = field(default_factory=list)  # [(kernel, bias), ...]

    @property
    def total_stride(self):
        return int(np.prod([p for _, _, p in self.layers]))

    @property
    def out_width(self):
        return self.layers[-1][1]

    def tensors(self, prefix="cnn."):
        out = {}
        for j, (w, b) in enumerate(self.weights):
            out[f"{prefix}conv{j}.w"] = w
            out[f"{prefix}conv{j}.b"] = b
        return out


def cnn_init(c_in, arch, rng):
    layers = parse_arch(arch)
    weights = []
    width = c_in
    for tau, f, _ in layers:
        w = fan_in_uniform(rng, (tau, width, f), tau * width)
        b = Tensor(np.zeros(f), requires_grad=True)
        weights.append((w, b))
        width = f
    return CnnParams(layers, weights)


def cnn_stream(H, params):
    """conv (same, stride 1) -> max-pool(p_j) -> ReLU for each layer."""
    T = H.shape[-2]
    if T < params.total_stride:
        raise LevelTooShortError(f"level of length {T} is shorter than total stride {params.total_stride}")
    x = H
    for (tau, f, p), (w, b) in zip(params.layers, params.weights):
        if x.shape[-1] != w.shape[1]:
            raise DimensionError(f"CNN layer expects width {w.shape[1]}, got {x.shape[-1]}")
        x = relu(max_pool1d(conv1d(x, w) + b, p))
    return x


def dwn_forward(X, nwl: NwlParams, cnn: CnnParams):
    pyr = nwl_forward(X, nwl)
    P = cnn.total_stride
    kept = [h for h in pyr if h.shape[-2] >= P]
    if len(kept) < len(pyr):
        warnings.warn(
            f"dropping {len(pyr) - len(kept)} pyramid level(s) shorter than the CNN stride {P}",
            stacklevel=2,
        )
    if not kept:
        raise DegenerateInputError(f"no pyramid level is at least {P} frames long")
    return Pyramid([cnn_stream(h, cnn) for h in kept])


def dwn_fuse(pyramid, d=2):
    """Nearest-neighbour upsample every level to the finest length, then
    average. Short levels are right-padded with their last frame."""
    levels = list(pyramid)
    if not levels:
        raise ValueError("cannot fuse an empty pyramid")
    if len(levels) == 1:
        return levels[0]
    n = levels[0].shape[-2]
    ups = [levels[0]] + [upsample_nearest(c, d ** i, n) for i, c in enumerate(levels[1:], start=1)]
    return stack_mean(ups)
