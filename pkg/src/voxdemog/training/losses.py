"""Training losses as single fused graph nodes."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from voxdemog.errors import ContractError, DimensionError
from voxdemog.tensor import Tensor
from voxdemog.tensor.core import make_node


def _column(target, like: Tensor) -> np.ndarray:
    t = np.asarray(target, dtype=like.dtype).reshape(-1)
    if t.size != like.shape[0] or like.size != like.shape[0]:
        raise DimensionError(f"expected predictions (N, 1) matching {t.size} targets, got {like.shape}")
    return t.reshape(like.shape)


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy on raw logits, overflow-safe."""
    y = _column(labels, logits)
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("bce_with_logits needs labels in {0, 1}")
    z = logits.data
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.shape[0]
    sig = expit(z)

    def _bw(g):
        return (g * (sig - y) / n,)

    return make_node(np.asarray(per.mean(), dtype=z.dtype), (logits,), _bw)


def mae_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error; the subgradient at a tie is 0."""
    t = _column(target, pred)
    diff = pred.data - t
    n = diff.shape[0]
    return make_node(np.asarray(np.abs(diff).mean(), dtype=pred.dtype), (pred,), lambda g: (g * np.sign(diff) / n,))


LOSSES = {"bce": bce_with_logits, "mae": mae_loss}
TASK_LOSS = {"sex": "bce", "binary_generic": "bce", "age": "mae"}
