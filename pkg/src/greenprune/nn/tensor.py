"""Minimal reverse-mode autodiff over dense float64 numpy arrays."""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced or expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Backpropagate from this (typically scalar) node through the graph."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- op construction -------------------------------------------------

    @staticmethod
    def _result(data, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        return out

    # -- elementwise -----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            def backward(g):
                if self.requires_grad:
                    self.accumulate_grad(g)
            return Tensor._result(self.data + other, (self,), backward)
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other.accumulate_grad(_unbroadcast(g, other.data.shape))
        return Tensor._result(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(-g)
        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            def backward(g):
                if self.requires_grad:
                    self.accumulate_grad(g * other)
            return Tensor._result(self.data * other, (self,), backward)
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other.accumulate_grad(_unbroadcast(g * self.data, other.data.shape))
        return Tensor._result(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def square(self):
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(g * 2.0 * self.data)
        return Tensor._result(self.data * self.data, (self,), backward)

    def exp(self):
        out_data = np.exp(self.data)
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(g * out_data)
        return Tensor._result(out_data, (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(g * 0.5 / out_data)
        return Tensor._result(out_data, (self,), backward)

    def relu(self):
        mask = self.data > 0
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(g * mask)
        return Tensor._result(np.where(mask, self.data, 0.0), (self,), backward)

    def clamp(self, lo: float, hi: float):
        # Pass-through gradient inside the interval, zero outside.
        inside = (self.data >= lo) & (self.data <= hi)
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(g * inside)
        return Tensor._result(np.clip(self.data, lo, hi), (self,), backward)

    def clamp_straight_through(self, lo: float, hi: float):
        # Clip values but pass gradients unchanged, so coordinates pushed past
        # the bounds by momentum keep a recovery signal instead of going dead.
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(g)
        return Tensor._result(np.clip(self.data, lo, hi), (self,), backward)

    # -- shape and reductions ---------------------------------------------

    def reshape(self, *shape):
        original = self.data.shape
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(g.reshape(original))
        return Tensor._result(self.data.reshape(*shape), (self,), backward)

    def mean(self):
        n = self.data.size
        shape = self.data.shape
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(np.full(shape, float(g) / n))
        return Tensor._result(self.data.mean(), (self,), backward)

    def sum(self):
        shape = self.data.shape
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(np.full(shape, float(g)))
        return Tensor._result(self.data.sum(), (self,), backward)

    # -- linear algebra ----------------------------------------------------

    def matmul(self, other: "Tensor"):
        def backward(g):
            if self.requires_grad:
                self.accumulate_grad(g @ other.data.T)
            if other.requires_grad:
                other.accumulate_grad(self.data.T @ g)
        return Tensor._result(self.data @ other.data, (self, other), backward)

    __matmul__ = matmul
