"""Dual-head regression model built from a network architecture.

The feature extractor follows the architecture layer by layer; two linear
heads on the shared features predict the per-category mean and log-spread.
The log-spread output is clamped so sigma = exp(logsigma) stays in
[e^-6, e^6].
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..archspec import ArchError, NetworkArch, infer_shapes, parse_arch, serialize_arch
from .layers import LinearLayer, build_layer
from .tensor import Tensor

LOGSIGMA_MIN = -6.0
LOGSIGMA_MAX = 6.0

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class GaussianPrediction:
    """Per-category mean and strictly positive spread for one input."""

    mu: np.ndarray
    sigma: np.ndarray


class Model:
    def __init__(
        self,
        arch: NetworkArch,
        layers: list,
        head_mu: LinearLayer,
        head_logsigma: LinearLayer,
        category_count: int,
        seed: int,
        input_center: float = 0.5,
        input_scale: float = 4.0,
    ):
        self.arch = arch
        self.layers = layers
        self.head_mu = head_mu
        self.head_logsigma = head_logsigma
        self.category_count = category_count
        self.seed = seed
        # inputs are standardized as (x - center) * scale before the first
        # layer; raw [0,1] images drive whole filters always-on/always-off
        # and stall learning under fan-in-scaled init
        self.input_center = input_center
        self.input_scale = input_scale
        self._skip_source = {dst: src for src, dst in arch.skip_edges}
        self._skip_sources = set(self._skip_source.values())

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for layer in self.layers:
            if layer is not None:
                params.extend(layer.params())
        params.extend(self.head_mu.params())
        params.extend(self.head_logsigma.params())
        return params

    def features(self, x: Tensor) -> Tensor:
        stashed: dict[int, Tensor] = {}
        cur = x
        for spec, layer in zip(self.arch.layers, self.layers):
            if spec.kind == "residual-add":
                cur = cur + stashed[self._skip_source[spec.id]]
            else:
                cur = layer(cur)
            if spec.id in self._skip_sources:
                stashed[spec.id] = cur
        return cur

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return forward(self, x)


def build_from_arch(
    arch: NetworkArch,
    category_count: int,
    seed: int = 0,
    mu_bias_init: float = 0.0,
    input_center: float = 0.5,
    input_scale: float = 4.0,
) -> Model:
    """Instantiate a dual-head model with fan-in-scaled random weights.

    The log-spread head starts with zero bias and small weights so sigma is
    close to 1 on a fresh model; ``mu_bias_init`` seeds the mean head's bias
    (e.g. the uniform composition when targets are percentages). Deterministic
    per seed.
    """
    if category_count < 1:
        raise ValueError("category_count must be >= 1")
    arch = infer_shapes(arch)
    final = arch.layers[-1]
    if final.out_hw != (1, 1):
        raise ArchError(
            f"architecture ends with a non-flattened {final.out_hw} spatial output; "
            "add a flatten (or pool to 1x1) before the heads"
        )
    rng = np.random.default_rng(seed)
    layers = [build_layer(spec, rng) for spec in arch.layers]
    feature_dim = final.c_out
    head_mu = LinearLayer(feature_dim, category_count, rng, gain=1.0)
    head_mu.bias.data[:] = mu_bias_init
    head_logsigma = LinearLayer(feature_dim, category_count, rng, gain=0.1)
    return Model(
        arch, layers, head_mu, head_logsigma, category_count, seed, input_center, input_scale
    )


def forward(model: Model, batch: Tensor | np.ndarray) -> tuple[Tensor, Tensor]:
    """Run a [B, C, H, W] batch through the extractor and both heads.

    Returns (mu, logsigma), each [B, category_count]; logsigma is clamped to
    [LOGSIGMA_MIN, LOGSIGMA_MAX].
    """
    if not isinstance(batch, Tensor):
        batch = Tensor(batch)
    expected = model.arch.input_shape
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(expected):
        raise ValueError(f"batch shape {batch.shape} does not match input shape {expected}")
    if model.input_center != 0.0 or model.input_scale != 1.0:
        batch = (batch - model.input_center) * model.input_scale
    feats = model.features(batch)
    if feats.ndim != 2:
        feats = feats.reshape(feats.shape[0], -1)
    mu = model.head_mu(feats)
    logsigma = model.head_logsigma(feats).clamp_straight_through(LOGSIGMA_MIN, LOGSIGMA_MAX)
    return mu, logsigma


def predict_batch(model: Model, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mu, sigma) arrays for a batch, without building gradient state."""
    mu, logsigma = forward(model, Tensor(images))
    return mu.data.copy(), np.exp(logsigma.data)


def predict_gaussian(model: Model, x: np.ndarray) -> GaussianPrediction:
    """Gaussian prediction for a single [C, H, W] input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected a single [C,H,W] input, got shape {x.shape}")
    mu, sigma = predict_batch(model, x[None])
    return GaussianPrediction(mu=mu[0], sigma=sigma[0])


def _param_entries(model: Model):
    for spec, layer in zip(model.arch.layers, model.layers):
        if layer is None or not layer.params():
            continue
        yield f"layer{spec.id:03d}_weight", layer.weight
        yield f"layer{spec.id:03d}_bias", layer.bias
    yield "head_mu_weight", model.head_mu.weight
    yield "head_mu_bias", model.head_mu.bias
    yield "head_logsigma_weight", model.head_logsigma.weight
    yield "head_logsigma_bias", model.head_logsigma.bias


def save_model(model: Model, path: str) -> None:
    """Write an npz checkpoint: architecture document, metadata, parameter arrays.

    The zip member table doubles as the manifest (name, shape, dtype per
    array); load_model(save_model(m)) reproduces m exactly.
    """
    meta = {
        "format": CHECKPOINT_FORMAT,
        "category_count": model.category_count,
        "seed": model.seed,
        "input_center": model.input_center,
        "input_scale": model.input_scale,
    }
    arrays = {name: tensor.data for name, tensor in _param_entries(model)}
    with open(path, "wb") as f:
        np.savez(
            f,
            arch_text=np.array(serialize_arch(model.arch)),
            meta=np.array(json.dumps(meta)),
            **arrays,
        )


def load_model(path: str) -> Model:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')}")
        arch = parse_arch(str(archive["arch_text"]))
        model = build_from_arch(
            arch,
            meta["category_count"],
            seed=meta.get("seed", 0),
            input_center=meta.get("input_center", 0.5),
            input_scale=meta.get("input_scale", 4.0),
        )
        for name, tensor in _param_entries(model):
            stored = archive[name]
            if stored.shape != tensor.data.shape:
                raise ValueError(
                    f"checkpoint array {name} has shape {stored.shape}, "
                    f"expected {tensor.data.shape}"
                )
            tensor.data = stored.astype(np.float64)
    return model
