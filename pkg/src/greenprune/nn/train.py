"""SGD-with-momentum training loop with cosine learning rate decay and flip augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .losses import squared_error_loss, uncert_loss
from .model import Model, forward
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 3e-4
    momentum: float = 0.9
    batch_size: int = 32
    lr_schedule: str = "cosine"  # "cosine" or "constant"
    loss_kind: str = "uncert"  # "uncert" or "rmse"
    max_grad_norm: float | None = 5.0
    seed: int = 0
    hflip: bool = True
    vflip: bool = True

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be positive or None")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule '{self.lr_schedule}'")
        if self.loss_kind not in ("uncert", "rmse"):
            raise ValueError(f"unknown loss_kind '{self.loss_kind}'")


def cosine_lr(eta0: float, epoch: int, total_epochs: int) -> float:
    """eta0 * 0.5 * (1 + cos(pi * epoch / total_epochs)); eta0/2 at midpoint."""
    return eta0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class SGD:
    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        momentum: float = 0.9,
        max_grad_norm: float | None = None,
    ):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.max_grad_norm = max_grad_norm
        self.velocity = [np.zeros_like(p.data) for p in params]

    def _clip(self) -> None:
        # global-norm clipping; tames the large early steps of the
        # likelihood loss before the spread head has calibrated
        total = np.sqrt(
            sum(float((p.grad ** 2).sum()) for p in self.params if p.grad is not None)
        )
        if total > self.max_grad_norm:
            scale = self.max_grad_norm / total
            for p in self.params:
                if p.grad is not None:
                    p.grad *= scale

    def step(self) -> None:
        if self.max_grad_norm is not None:
            self._clip()
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        images, targets = data
    else:
        images, targets = data.images, data.targets
    return np.asarray(images, dtype=np.float64), np.asarray(targets, dtype=np.float64)


def _augmented(images: np.ndarray, rng: np.random.Generator, hflip: bool, vflip: bool) -> np.ndarray:
    out = images.copy()
    n = out.shape[0]
    if hflip:
        flip = rng.random(n) < 0.5
        out[flip] = out[flip, :, :, ::-1]
    if vflip:
        flip = rng.random(n) < 0.5
        out[flip] = out[flip, :, ::-1, :]
    return out


def train(model: Model, data, config: TrainConfig) -> tuple[Model, list[dict]]:
    """Train in place over shuffled mini-batches; deterministic per config seed.

    ``data`` is a (images, targets) pair or any object with those attributes;
    images are [N, C, H, W], targets [N, category_count]. Returns the model
    and a per-epoch history of learning rate and mean batch loss. Raises
    :class:`TrainingDiverged` when the loss becomes non-finite.
    """
    images, targets = _as_arrays(data)
    if images.shape[0] == 0:
        raise ValueError("training set is empty")
    if targets.shape != (images.shape[0], model.category_count):
        raise ValueError(
            f"targets shape {targets.shape} does not match "
            f"({images.shape[0]}, {model.category_count})"
        )
    loss_fn = uncert_loss if config.loss_kind == "uncert" else squared_error_loss
    rng = np.random.default_rng(config.seed)
    optimizer = SGD(
        model.parameters(), config.learning_rate, config.momentum, config.max_grad_norm
    )
    n = images.shape[0]
    history: list[dict] = []

    for epoch in range(config.epochs):
        if config.lr_schedule == "cosine":
            optimizer.lr = cosine_lr(config.learning_rate, epoch, config.epochs)
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = _augmented(images[idx], rng, config.hflip, config.vflip)
            mu, logsigma = forward(model, Tensor(batch))
            try:
                if config.loss_kind == "uncert":
                    loss = loss_fn(mu, logsigma, targets[idx])
                else:
                    loss = loss_fn(mu, targets[idx])
            except ValueError as e:
                raise TrainingDiverged(
                    f"{e} at epoch {epoch}, batch {start // config.batch_size}"
                ) from None
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, batch {start // config.batch_size}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(value)
        history.append(
            {"epoch": epoch, "lr": optimizer.lr, "loss": float(np.mean(epoch_losses))}
        )
    return model, history
