"""Point metrics: ROC AUC, average precision, Pearson r, MAE."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from voxdemog.errors import DimensionError, UndefinedMetricError


def _pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise DimensionError(f"{s.size} scores vs {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise UndefinedMetricError("labels must be 0 or 1")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    s, y = _pair(scores, labels)
    m, n = int(y.sum()), int((~y).sum())
    if m == 0 or n == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - m * (m + 1) / 2.0) / (m * n))


def auprc(scores, labels) -> float:
    """Average precision: sum over recall steps of (delta recall) * precision.

    Tied scores form one threshold, so without ties this is the mean of the
    precision at each positive's rank.
    """
    s, y = _pair(scores, labels)
    m = int(y.sum())
    if m == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp_t = tp[last].astype(np.float64)
    precision = tp_t / (last + 1)
    recall = tp_t / m
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DimensionError(f"{x.size} vs {y.size} values")
    if x.size < 2:
        raise UndefinedMetricError("Pearson r needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("Pearson r is undefined for a constant input")
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def mae(pred, true) -> float:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(true, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise DimensionError(f"{p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise UndefinedMetricError("MAE of an empty set")
    return float(np.abs(p - t).mean())


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, starting from (0, 0)."""
    s, y = _pair(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    m, n = max(int(y.sum()), 1), max(int((~y).sum()), 1)
    return np.r_[0.0, fp / n], np.r_[0.0, tp / m]
