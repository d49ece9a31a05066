"""DeLong variance and paired comparison of correlated ROC AUCs.

Structural components use midranks, so the O((m + n) log(m + n)) path
handles ties exactly like the pairwise definition.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm, rankdata

from voxdemog.errors import DimensionError, UndefinedMetricError
from voxdemog.stats.significance import TestResult


def _split(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    if s.shape[-1] != y.size:
        raise DimensionError(f"{s.shape[-1]} scores vs {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise UndefinedMetricError("labels must be 0 or 1")
    pos = y == 1
    m, n = int(pos.sum()), int((~pos).sum())
    if m < 2 or n < 2:
        raise UndefinedMetricError(f"DeLong needs >= 2 of each class, got {m} positive / {n} negative")
    return s[..., pos], s[..., ~pos]


def structural_components(pos: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """V10 (per positive) and V01 (per negative) for one score vector."""
    m, n = pos.size, neg.size
    tx = rankdata(pos)
    ty = rankdata(neg)
    tz = rankdata(np.concatenate([pos, neg]))
    v10 = (tz[:m] - tx) / n
    v01 = 1.0 - (tz[m:] - ty) / m
    return v10, v01


def delong_components(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """AUCs, V10 (k x m) and V01 (k x n) for k score rows."""
    s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    pos, neg = _split(s, labels)
    comps = [structural_components(p, q) for p, q in zip(pos, neg)]
    v10 = np.stack([c[0] for c in comps])
    v01 = np.stack([c[1] for c in comps])
    return v10.mean(axis=1), v10, v01


def delong_covariance(v10: np.ndarray, v01: np.ndarray) -> np.ndarray:
    m, n = v10.shape[1], v01.shape[1]
    s10 = np.atleast_2d(np.cov(v10, ddof=1))
    s01 = np.atleast_2d(np.cov(v01, ddof=1))
    return s10 / m + s01 / n


def delong_variance(scores, labels) -> tuple[float, float]:
    """(AUC, variance of the AUC estimate)."""
    aucs, v10, v01 = delong_components(scores, labels)
    return float(aucs[0]), float(delong_covariance(v10, v01)[0, 0])


def delong_ci(scores, labels, level: float = 0.95) -> tuple[float, float, float]:
    """AUC with a normal-theory interval clipped to [0, 1]."""
    auc, var = delong_variance(scores, labels)
    half = norm.ppf(0.5 + level / 2.0) * np.sqrt(max(var, 0.0))
    return auc, max(0.0, auc - half), min(1.0, auc + half)


def delong_paired_test(scores_a, scores_b, labels) -> TestResult:
    """Two-sided z test of AUC_A == AUC_B on the same subjects.

    A zero-variance difference gives p = 1 when the AUCs agree and p = 0
    when they differ.
    """
    a = np.asarray(scores_a, dtype=np.float64).reshape(-1)
    b = np.asarray(scores_b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError("paired DeLong needs score vectors of equal length")
    aucs, v10, v01 = delong_components(np.vstack([a, b]), labels)
    cov = delong_covariance(v10, v01)
    var = float(cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1])
    diff = float(aucs[0] - aucs[1])
    if var <= 1e-300:
        z = 0.0 if abs(diff) < 1e-15 else np.copysign(np.inf, diff)
        p = 1.0 if abs(diff) < 1e-15 else 0.0
    else:
        z = diff / np.sqrt(var)
        p = float(min(1.0, 2.0 * norm.sf(abs(z))))
    return TestResult(
        statistic=float(z),
        p_value=p,
        method="delong",
        n=a.size,
        extra={"auc_a": float(aucs[0]), "auc_b": float(aucs[1]), "var_diff": var},
    )
