"""Normalisation, activations, affine maps and dropout."""

from __future__ import annotations

import numpy as np
from scipy import special

from voxdemog.errors import DimensionError
from voxdemog.tensor.core import Tensor, make_node

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class BatchNormState:
    """Running statistics owned by one batchnorm layer."""

    def __init__(self, channels: int, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel normalisation over every axis except axis 1.

    Uses the biased variance both for normalising and for the running
    average. In training mode the running statistics in ``state`` are
    updated in place.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm parameters have shape {gamma.shape}, input has {c} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        state.running_mean = ((1 - momentum) * state.running_mean + momentum * mu).astype(state.running_mean.dtype)
        state.running_var = ((1 - momentum) * state.running_var + momentum * var).astype(state.running_var.dtype)
    else:
        mu = state.running_mean.astype(xd.dtype)
        var = state.running_var.astype(xd.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    m = xd.size // c

    def _bw(g):
        gg = g.sum(axis=axes)
        gxh = (g * xhat).sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (inv_std.reshape(bshape) / m) * (
                m * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = dxhat * inv_std.reshape(bshape)
        return gx, gxh, gg

    return make_node(out, (x, gamma, beta), _bw)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layernorm parameters have shape {gamma.shape}, last axis is {c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def _bw(g):
        dxhat = g * gamma.data
        gx = inv_std / c * (
            c * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_node(out, (x, gamma, beta), _bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Exact form x * Phi(x) with the standard normal CDF."""
    xd = x.data
    cdf = 0.5 * (1.0 + special.erf(xd / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * xd * xd) / _SQRT_2PI
    return make_node((xd * cdf).astype(xd.dtype), (x,), lambda g: ((g * (cdf + xd * pdf)).astype(xd.dtype),))


def sigmoid(x: Tensor) -> Tensor:
    out = special.expit(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return make_node(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: x @ w.T + b with w of shape (out, in)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear: input last axis {x.shape[-1]} vs weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} vs weight {w.shape}")
    xd, wd = x.data, w.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd.T
    if b is not None:
        out = out + b.data
    out = out.reshape(lead + (wd.shape[0],))

    def _bw(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = (g2 @ wd).reshape(xd.shape)
        gw = g2.T @ x2
        return (gx, gw, g2.sum(axis=0)) if b is not None else (gx, gw)

    return make_node(out, (x, w, b) if b is not None else (x, w), _bw)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or when p == 0."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,))
