"""Layer objects instantiated from architecture specs."""

from __future__ import annotations

import numpy as np

from ..archspec import ArchError, LayerSpec
from .ops import avgpool2d, conv2d, maxpool2d
from .tensor import Tensor


class ConvLayer:
    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        scale = np.sqrt(2.0 / (spec.c_in * spec.kernel_omega**2))
        self.weight = Tensor(
            rng.normal(0.0, scale, size=(spec.c_out, spec.c_in, spec.kernel_omega, spec.kernel_omega)),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(spec.c_out), requires_grad=True)
        self.stride = spec.stride
        self.padding = spec.padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class LinearLayer:
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, gain: float = np.sqrt(2.0)):
        scale = gain / np.sqrt(c_in)
        self.weight = Tensor(rng.normal(0.0, scale, size=(c_in, c_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x.matmul(self.weight) + self.bias

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class ReLULayer:
    def __call__(self, x: Tensor) -> Tensor:
        return x.relu()

    def params(self) -> list[Tensor]:
        return []


class MaxPoolLayer:
    def __init__(self, spec: LayerSpec):
        if spec.stride != spec.kernel_omega:
            raise ArchError(
                f"layer {spec.id}: the engine supports pooling only with stride == window"
            )
        self.k = spec.kernel_omega

    def __call__(self, x: Tensor) -> Tensor:
        return maxpool2d(x, self.k)

    def params(self) -> list[Tensor]:
        return []


class AvgPoolLayer(MaxPoolLayer):
    def __call__(self, x: Tensor) -> Tensor:
        return avgpool2d(x, self.k)


class FlattenLayer:
    def __call__(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[0], -1)

    def params(self) -> list[Tensor]:
        return []


def build_layer(spec: LayerSpec, rng: np.random.Generator):
    """Instantiate the executable layer for one spec; residual-add is handled
    by the model's forward walk and maps to None here."""
    if spec.kind == "conv":
        return ConvLayer(spec, rng)
    if spec.kind == "linear":
        return LinearLayer(spec.c_in, spec.c_out, rng)
    if spec.kind == "relu":
        return ReLULayer()
    if spec.kind == "maxpool":
        return MaxPoolLayer(spec)
    if spec.kind == "avgpool":
        return AvgPoolLayer(spec)
    if spec.kind == "flatten":
        return FlattenLayer()
    if spec.kind == "residual-add":
        return None
    raise ArchError(f"unknown layer kind '{spec.kind}'")
