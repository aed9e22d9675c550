"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat N]

Both variants are imported from ``pyrcpd.kernels`` directly, so the result
does not depend on ``PYRCPD_NUMBA``; numba must be importable.
"""
import argparse
import timeit

import numpy as np

from pyrcpd import kernels


def cases(rng):
    T, B, H = 512, 4, 64
    z4, wh4 = rng.normal(size=(T, B, 4 * H)), rng.normal(size=(H, 4 * H)) * 0.1
    hs, cs, acts = kernels.lstm_forward_np(z4, wh4)
    dhs = rng.normal(size=hs.shape)
    z1, wh1 = rng.normal(size=(T, B, H)), rng.normal(size=(H, H)) * 0.1
    rh = kernels.relu_rnn_forward_np(z1, wh1)
    scores = rng.random(100_000)
    return {
        "lstm_forward": ((z4, wh4),),
        "lstm_backward": ((dhs, hs, cs, acts, wh4),),
        "relu_rnn_forward": ((z1, wh1),),
        "relu_rnn_backward": ((dhs[..., :H], rh, wh1),),
        "nms_mask": ((scores, 8),),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, (inputs,) in cases(rng).items():
        fast = getattr(kernels, name + "_nb")
        slow = getattr(kernels, name + "_np")
        fast(*inputs)  # compile outside the timed region
        t_np = min(timeit.repeat(lambda: slow(*inputs), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fast(*inputs), number=1, repeat=args.repeat))
        print(f"{name:<20}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
