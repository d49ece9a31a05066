"""Wilcoxon signed-rank test on paired absolute errors."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm, rankdata

from voxdemog.errors import DimensionError
from voxdemog.stats.significance import TestResult

EXACT_MAX_N = 25


def signed_rank_null_counts(ranks: np.ndarray) -> np.ndarray:
    """Counts of sign assignments giving each value of 2 * W+.

    Midranks are multiples of 1/2, so doubling makes every rank an integer
    and the 2^n enumeration collapses into a subset-sum convolution.
    """
    r2 = np.rint(2.0 * np.asarray(ranks)).astype(np.int64)
    counts = np.zeros(int(r2.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    return counts


def signed_rank_exact_p(ranks: np.ndarray, w_plus: float) -> float:
    counts = signed_rank_null_counts(ranks)
    total = float(counts.sum())
    k = int(round(2.0 * w_plus))
    lower = counts[: k + 1].sum() / total
    upper = counts[k:].sum() / total
    return float(min(1.0, 2.0 * min(lower, upper)))


def signed_rank_normal_p(ranks: np.ndarray, w_plus: float) -> tuple[float, float]:
    """(z, p) with tie-corrected variance and a 0.5 continuity correction."""
    n = ranks.size
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(var)
    return float(np.sign(w_plus - mean) * z), float(min(1.0, 2.0 * norm.sf(z)))


def wilcoxon_signed_rank(errors_a, errors_b, exact_max_n: int = EXACT_MAX_N) -> TestResult:
    """Paired test on d = |err_A| - |err_B|; zero differences are dropped.

    The statistic is min(W+, W-). Exact two-sided p for n <= ``exact_max_n``
    non-zero differences, normal approximation above.
    """
    a = np.abs(np.asarray(errors_a, dtype=np.float64).reshape(-1))
    b = np.abs(np.asarray(errors_b, dtype=np.float64).reshape(-1))
    if a.shape != b.shape:
        raise DimensionError("paired test needs equal-length inputs")
    d = a - b
    return signed_rank_test(d, exact_max_n)


def signed_rank_test(d, exact_max_n: int = EXACT_MAX_N) -> TestResult:
    """Signed-rank test on raw paired differences ``d``."""
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return TestResult(0.0, 1.0, "wilcoxon", 0, degenerate=True)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if n <= exact_max_n:
        p = signed_rank_exact_p(ranks, w_plus)
        method = "wilcoxon-exact"
        extra = {"w_plus": w_plus, "w_minus": w_minus}
    else:
        z, p = signed_rank_normal_p(ranks, w_plus)
        method = "wilcoxon-normal"
        extra = {"w_plus": w_plus, "w_minus": w_minus, "z": z}
    return TestResult(min(w_plus, w_minus), p, method, n, extra=extra)
