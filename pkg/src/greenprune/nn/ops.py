"""Spatial ops for the autodiff engine: conv2d and k=stride pooling via im2col."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """[B,C,H,W] -> [B, C*k*k, N] patch matrix (copies; input may be a view)."""
    b, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    sb, sc, sh, sw = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, k, k, ho, wo),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return patches.reshape(b, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, x_shape: tuple, k: int, stride: int) -> np.ndarray:
    """Scatter-add a [B, C*k*k, N] gradient back onto the [B,C,H,W] canvas."""
    b, c, h, w = x_shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    grad = np.zeros(x_shape, dtype=cols.dtype)
    cols = cols.reshape(b, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            grad[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[
                :, :, i, j
            ]
    return grad


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2d convolution; weight [C_out, C_in, k, k], bias [C_out]."""
    c_out, c_in, k, _ = weight.data.shape
    xd = x.data
    if padding > 0:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b = xd.shape[0]
    ho = (xd.shape[2] - k) // stride + 1
    wo = (xd.shape[3] - k) // stride + 1
    cols = _im2col(xd, k, stride)
    wmat = weight.data.reshape(c_out, -1)
    out_data = (wmat @ cols).reshape(b, c_out, ho, wo) + bias.data[None, :, None, None]

    padded_shape = xd.shape

    def backward(g):
        gof = g.reshape(b, c_out, ho * wo)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            gw = np.matmul(gof, cols.transpose(0, 2, 1)).sum(axis=0)
            weight.accumulate_grad(gw.reshape(weight.data.shape))
        if x.requires_grad:
            grad_cols = np.matmul(wmat.T, gof)
            gx = _col2im(grad_cols, padded_shape, k, stride)
            if padding > 0:
                gx = gx[:, :, padding:-padding, padding:-padding]
            x.accumulate_grad(gx)

    return Tensor._result(out_data, (x, weight, bias), backward)


def _pool_window(xd: np.ndarray, k: int) -> np.ndarray:
    """[B,C,H,W] -> [B,C,Ho,Wo,k*k] non-overlapping windows (trims the remainder)."""
    b, c, h, w = xd.shape
    ho, wo = h // k, w // k
    xd = xd[:, :, : ho * k, : wo * k]
    return xd.reshape(b, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, k * k)


def maxpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Max pooling; only the k == stride case is supported by the engine."""
    stride = k if stride is None else stride
    if stride != k:
        raise NotImplementedError("pooling layers support only stride == window size")
    windows = _pool_window(x.data, k)
    arg = windows.argmax(axis=-1)
    out_data = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    b, c, ho, wo = out_data.shape
    in_shape = x.data.shape

    def backward(g):
        if not x.requires_grad:
            return
        scatter = np.zeros((b, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(scatter, arg[..., None], g[..., None], axis=-1)
        gx_core = (
            scatter.reshape(b, c, ho, wo, k, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, ho * k, wo * k)
        )
        gx = np.zeros(in_shape, dtype=g.dtype)
        gx[:, :, : ho * k, : wo * k] = gx_core
        x.accumulate_grad(gx)

    return Tensor._result(out_data, (x,), backward)


def avgpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Average pooling; only the k == stride case is supported by the engine."""
    stride = k if stride is None else stride
    if stride != k:
        raise NotImplementedError("pooling layers support only stride == window size")
    windows = _pool_window(x.data, k)
    out_data = windows.mean(axis=-1)
    b, c, ho, wo = out_data.shape
    in_shape = x.data.shape

    def backward(g):
        if not x.requires_grad:
            return
        spread = np.repeat(g[..., None] / (k * k), k * k, axis=-1)
        gx_core = (
            spread.reshape(b, c, ho, wo, k, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, ho * k, wo * k)
        )
        gx = np.zeros(in_shape, dtype=g.dtype)
        gx[:, :, : ho * k, : wo * k] = gx_core
        x.accumulate_grad(gx)

    return Tensor._result(out_data, (x,), backward)
