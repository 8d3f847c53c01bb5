"""Training losses: Gaussian negative log-likelihood with predicted spread, and RMSE."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(name: str, t: Tensor, shape) -> None:
    if not np.all(np.isfinite(t.data)):
        raise ValueError(f"{name} contains non-finite values")
    if shape is not None and t.data.shape != shape:
        raise ValueError(f"{name} has shape {t.data.shape}, expected {shape}")


def uncert_loss(mu, logsigma, target) -> Tensor:
    """Variance-attenuating Gaussian likelihood loss.

    Per element: 2*logsigma + ((target - mu)^2) * exp(-2*logsigma), averaged
    over batch and categories. Computed from logsigma directly for stability.
    With logsigma fixed at 0 this is exactly the mean squared error.
    """
    mu, logsigma, target = _as_tensor(mu), _as_tensor(logsigma), _as_tensor(target)
    _check("mu", mu, None)
    _check("logsigma", logsigma, mu.data.shape)
    _check("target", target, mu.data.shape)
    residual = target - mu
    inv_var = (logsigma * -2.0).exp()
    return (logsigma * 2.0 + residual.square() * inv_var).mean()


def squared_error_loss(mu, target) -> Tensor:
    """Root of the mean (over batch and categories) squared residual."""
    mu, target = _as_tensor(mu), _as_tensor(target)
    _check("mu", mu, None)
    _check("target", target, mu.data.shape)
    return (target - mu).square().mean().sqrt()


LOSSES = {"uncert": uncert_loss, "rmse": squared_error_loss}
