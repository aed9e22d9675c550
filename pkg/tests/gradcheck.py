import numpy as np

from pyrcpd.tensor import Tensor, matmul, numerical_grad_adaptive, relative_error, tsum


def weighted_sum(out, seed=0):
    """Scalar probe: sum(out * W) with fixed random W so every output
    element carries a distinct weight."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return tsum(out * Tensor(w))


def check_op(fn, *arrays, tol=1e-5):
    """Compare analytic and finite-difference gradients of ``fn`` for every
    input array; returns the worst relative error."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = weighted_sum(fn(*leaves))
    loss.backward()
    worst = 0.0
    for leaf in leaves:
        num = numerical_grad_adaptive(lambda: float(weighted_sum(fn(*leaves)).data), leaf.data)
        worst = max(worst, float(relative_error(leaf.grad, num).max()))
    assert worst < tol, worst
    return worst


def check_model(model, X, y, tol=1e-4):
    model.zero_grad()
    model.loss(X, y).backward()
    f = lambda: float(model.loss(X, y).data)
    worst = 0.0
    for name, p in model.params.items():
        num = numerical_grad_adaptive(f, p.data)
        err = float(relative_error(p.grad, num).max())
        worst = max(worst, err)
    return worst
