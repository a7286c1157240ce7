"""Differentiable layer primitives.

Channel-first layouts throughout: pointwise convolution and batch norm take
``(C, L)`` or batched ``(B, C, L)`` inputs, fully connected layers take
``(D,)`` or ``(B, D)``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, as_tensor, make_op


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Pointwise (kernel size 1) 1-D convolution.

    out[c, l] = bias[c] + sum_i weight[c, i, 0] * x[i, l]
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 3 or weight.shape[2] != 1:
        raise ContractError(f"conv1d weight must be (C_out, C_in, 1), got {weight.shape}")
    c_out, c_in, _ = weight.shape
    if x.ndim not in (2, 3) or x.shape[-2] != c_in:
        raise ContractError(f"conv1d input must be (C_in={c_in}, L) or (B, C_in, L), got {x.shape}")
    if bias.shape != (c_out,):
        raise ContractError(f"conv1d bias must be ({c_out},), got {bias.shape}")
    if x.shape[-1] < 1:
        raise ContractError("conv1d input has zero length")

    w = weight.data[:, :, 0]
    out = np.matmul(w, x.data) + bias.data[:, None]

    def bw(g):
        gx = np.matmul(w.T, g) if x.requires_grad else None
        if not weight.requires_grad:
            return gx, None, None
        if g.ndim == 3:
            gw = np.matmul(g, np.swapaxes(x.data, 1, 2)).sum(axis=0)
            gb = g.sum(axis=(0, 2))
        else:
            gw = g @ x.data.T
            gb = g.sum(axis=1)
        return gx, gw[:, :, None], gb

    return make_op(out, (x, weight, bias), bw, "conv1d")


class RunningStats:
    """Per-channel running mean/variance for batch norm (EMA buffers)."""

    def __init__(self, channels: int, momentum: float = 0.1):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum
        self.initialized = True

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * mean
        self.var = (1.0 - m) * self.var + m * var


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    state: RunningStats | None = None,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize each channel over the length (and batch) axes.

    Training mode uses batch statistics (biased variance) and folds them
    into ``state``; eval mode uses ``state``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 3):
        raise ContractError(f"batch_norm input must be (C, L) or (B, C, L), got {x.shape}")
    channels = x.shape[-2]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ContractError("batch_norm gamma/beta must match the channel count")
    if x.shape[-1] == 0:
        raise ContractError("batch_norm needs L >= 1")
    axes = (0, 2) if x.ndim == 3 else (1,)
    shape = (channels, 1)

    if training:
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(shape)
        var = (centered * centered).mean(axis=axes)
        if state is not None:
            state.update(mean, var)
    else:
        if state is None or not state.initialized:
            raise ContractError("eval-mode batch_norm needs initialized running stats")
        mean, var = state.mean, state.var
        centered = x.data - mean.reshape(shape)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(shape)
            if training:
                mean_g = gxhat.mean(axis=axes).reshape(shape)
                mean_gx = (gxhat * xhat).mean(axis=axes).reshape(shape)
                gx = (gxhat - mean_g - xhat * mean_gx) * inv_std.reshape(shape)
            else:
                gx = gxhat * inv_std.reshape(shape)
        return gx, ggamma, gbeta

    return make_op(out, (x, gamma, beta), bw, "batch_norm")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = x.data * mask

    def bw(g):
        return (g * mask,)

    return make_op(out, (x,), bw, "relu")


def max_pool_global(x: Tensor, return_indices: bool = False):
    """Max over the last (length) axis; ties route gradient to the first index.

    With ``return_indices`` the recorded argmax array is returned as well.
    """
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] == 0:
        raise ContractError("max_pool_global needs L >= 1")
    idx = np.argmax(x.data, axis=-1)
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (gx,)

    result = make_op(out, (x,), bw, "max_pool_global")
    return (result, idx) if return_indices else result


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """out = weight @ x + bias, for ``(D_in,)`` or batched ``(B, D_in)``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2:
        raise ContractError(f"fully_connected weight must be 2-D, got {weight.shape}")
    d_out, d_in = weight.shape
    if x.ndim not in (1, 2) or x.shape[-1] != d_in:
        raise ContractError(f"fully_connected input must end in {d_in}, got {x.shape}")
    if bias.shape != (d_out,):
        raise ContractError(f"fully_connected bias must be ({d_out},), got {bias.shape}")

    out = x.data @ weight.data.T + bias.data

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        if not weight.requires_grad:
            return gx, None, None
        if g.ndim == 2:
            gw = g.T @ x.data
            gb = g.sum(axis=0)
        else:
            gw = np.outer(g, x.data)
            gb = g
        return gx, gw, gb

    return make_op(out, (x, weight, bias), bw, "fully_connected")


def mse(a, b) -> Tensor:
    """Mean over all elements of the squared difference."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.array((diff * diff).sum() / n)

    def bw(g):
        ga = (2.0 / n) * diff * g
        return ga, -ga

    return make_op(out, (a, b), bw, "mse")
