"""Differentiable layer primitives built on :class:`Tensor`."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import _kernels
from .tensor import Tensor, _check_nonempty, as_tensor, matmul

__all__ = [
    "relu", "tanh", "softmax", "log_softmax", "linear", "conv2d", "batch_norm",
    "upsample", "max_pool2d", "flatten", "cross_entropy", "straight_through",
]


def relu(x: Tensor) -> Tensor:
    _check_nonempty(x, "relu")
    return x.relu()


def tanh(x: Tensor) -> Tensor:
    _check_nonempty(x, "tanh")
    return x.tanh()


def _softmax_np(a: np.ndarray) -> np.ndarray:
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    _check_nonempty(x, "softmax")
    if x.ndim < 1:
        raise ValueError("softmax needs at least a 1-D input")
    s = _softmax_np(x.data)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._make(s, (x,), back, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    _check_nonempty(x, "log_softmax")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def back(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return Tensor._make(out, (x,), back, "log_softmax")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    if x.ndim != 2:
        raise ValueError(f"linear expects (N, features) input, got {x.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input has {x.shape[1]} features, weight expects {weight.shape[1]}")
    out = matmul(x, weight.T)
    return out + bias if bias is not None else out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation on NCHW input with (O, C, KH, KW) weights."""
    _check_nonempty(x, "conv2d")
    if x.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if c != wc:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {wc}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")

    cols = _kernels.im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, oh, ow, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = _kernels.col2im(g2 @ wmat, x.shape, kh, kw, stride, padding) if x.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, back, "conv2d")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over every axis except 1 (features/channels).

    In training mode the batch statistics normalize the input and the running
    buffers are updated in place; in eval mode the running buffers are used.
    """
    _check_nonempty(x, "batch_norm")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    a = x.data
    if training:
        count = a.size // a.shape[1]
        if count < 2:
            raise ValueError("batch_norm in training mode needs more than one value per channel")
        mean = a.mean(axis=axes)
        var = a.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a - mean.reshape(bshape)) * inv_std.reshape(bshape)
    gm = gamma.data.reshape(bshape)
    out = gm * xhat + beta.data.reshape(bshape)

    def back(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gm
        if training:
            gx = (gxhat - gxhat.mean(axis=axes, keepdims=True)
                  - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)) * inv_std.reshape(bshape)
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), back, "batch_norm")


def upsample(x: Tensor, factor: int = 2, mode: str = "nearest") -> Tensor:
    _check_nonempty(x, "upsample")
    if x.ndim != 4:
        raise ValueError(f"upsample expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if mode == "nearest":
        out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

        def back(g):
            return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    elif mode == "bilinear":
        out = _kernels.upsample_bilinear(x.data, factor)

        def back(g):
            return (_kernels.upsample_bilinear_backward(g, (h, w), factor),)

    else:
        raise ValueError(f"unknown upsample mode {mode!r}")
    return Tensor._make(out, (x,), back, "upsample")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first maximum."""
    _check_nonempty(x, "max_pool2d")
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ValueError(f"max_pool2d: spatial dims {h}x{w} not divisible by {size}")
    blocks = x.data.reshape(n, c, h // size, size, w // size, size).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, h // size, w // size, size * size)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gb = gflat.reshape(n, c, h // size, w // size, size, size).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return Tensor._make(out, (x,), back, "max_pool2d")


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    logp = log_softmax(logits)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -(logp * onehot).sum() * (1.0 / len(labels))


def straight_through(exact: np.ndarray, surrogate: Tensor) -> Tensor:
    """Forward value ``exact``; gradient passes to ``surrogate`` unchanged."""
    exact = np.asarray(exact, dtype=np.float64)
    if exact.shape != surrogate.shape:
        raise ValueError(f"straight_through: {exact.shape} vs {surrogate.shape}")
    return surrogate + as_tensor(exact - surrogate.data)
