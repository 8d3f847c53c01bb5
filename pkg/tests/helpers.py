"""Shared test fixtures: a tiny exercisable architecture and a finite-difference gradcheck."""

import numpy as np

from greenprune.archspec import parse_arch
from greenprune.nn import Tensor, build_from_arch, forward, squared_error_loss, uncert_loss

# Exercises conv (padded), relu, residual-add, maxpool, avgpool, flatten,
# linear, and both heads, at a size where finite differences are fast.
TINY_ARCH_TEXT = """\
input 3x8x8
conv in=3 out=4 k=3 stride=1 pad=1
relu
conv in=4 out=4 k=3 stride=1 pad=1
residual-add
relu
maxpool k=2 stride=2
avgpool k=4 stride=4
flatten
linear in=4 out=6
relu
skip from=0 to=3
"""


def tiny_arch():
    return parse_arch(TINY_ARCH_TEXT)


def tiny_model(seed: int = 3, category_count: int = 3):
    return build_from_arch(tiny_arch(), category_count, seed=seed)


def finite_difference_gradcheck(
    model,
    loss_kind: str,
    x: np.ndarray,
    y: np.ndarray,
    n_probes: int = 20,
    step: float = 1e-3,
    probe_seed: int = 24,
):
    """Compare analytic gradients against central differences on random coordinates.

    Probes where the secant is itself unreliable (a relu/argmax flip inside the
    +-step interval, detected by disagreement between the step and step/4
    estimates) are redrawn: the loss is piecewise smooth and finite differences
    are meaningless across a kink. A genuinely wrong analytic gradient still
    fails, because there both finite-difference estimates agree with each other
    and disagree with the analytic value.

    Returns the list of relative errors of the accepted probes.
    """

    def loss_value():
        mu, logsigma = forward(model, Tensor(x))
        if loss_kind == "uncert":
            return uncert_loss(mu, logsigma, y)
        return squared_error_loss(mu, y)

    params = model.parameters()
    for p in params:
        p.grad = None
    loss_value().backward()

    def central(p, ci, h):
        orig = p.data.flat[ci]
        p.data.flat[ci] = orig + h
        lp = loss_value().item()
        p.data.flat[ci] = orig - h
        lm = loss_value().item()
        p.data.flat[ci] = orig
        return (lp - lm) / (2 * h)

    rng = np.random.default_rng(probe_seed)
    errors = []
    attempts = 0
    while len(errors) < n_probes:
        attempts += 1
        if attempts > 20 * n_probes:
            raise AssertionError("too many kink-crossing probes; fixture is badly scaled")
        p = params[int(rng.integers(len(params)))]
        ci = int(rng.integers(p.data.size))
        fd = central(p, ci, step)
        fd_small = central(p, ci, step / 4)
        scale = max(abs(fd), abs(fd_small), 1e-8)
        if abs(fd - fd_small) / scale > 1e-4:
            continue  # kink inside the interval; the secant says nothing
        analytic = p.grad.flat[ci] if p.grad is not None else 0.0
        errors.append(abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8))
    return errors
