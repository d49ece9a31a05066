"""Seeded subject-resampling bootstrap.

Resample ``i`` draws from ``default_rng([seed, i])`` so results do not depend
on evaluation order or parallelism.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from voxdemog.errors import UndefinedMetricError

N_BOOTSTRAP = 1000
MAX_REDRAWS = 100


def resample_indices(n: int, seed: int, i: int, stratify: np.ndarray | None = None) -> np.ndarray:
    """Index draw for resample ``i``; redraws while ``stratify`` lacks a class."""
    rng = np.random.default_rng([seed, i])
    for _ in range(MAX_REDRAWS):
        idx = rng.integers(0, n, size=n)
        if stratify is None or np.unique(stratify[idx]).size > 1:
            return idx
    raise UndefinedMetricError("bootstrap kept drawing single-class resamples")


def bootstrap_values(
    metric: Callable[[np.ndarray], float],
    n: int,
    seed: int,
    n_boot: int = N_BOOTSTRAP,
    stratify: np.ndarray | None = None,
) -> np.ndarray:
    """``metric(idx)`` over ``n_boot`` resamples; undefined resamples are skipped."""
    vals = []
    for i in range(n_boot):
        idx = resample_indices(n, seed, i, stratify)
        try:
            vals.append(metric(idx))
        except UndefinedMetricError:
            continue
    return np.asarray(vals, dtype=np.float64)


def percentile_ci(values: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    if values.size == 0:
        raise UndefinedMetricError("no valid bootstrap resamples")
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(values, [tail, 100.0 - tail])
    return float(lo), float(hi)


def paired_bootstrap_p(
    metric_a: Callable[[np.ndarray], float],
    metric_b: Callable[[np.ndarray], float],
    n: int,
    seed: int,
    n_boot: int = N_BOOTSTRAP,
    stratify: np.ndarray | None = None,
) -> tuple[float, float]:
    """Two-sided p for metric_a == metric_b from the resampled differences.

    p = 2 * min(P(diff <= 0), P(diff >= 0)) with a +1 correction so that a
    finite number of resamples never reports p = 0.
    """
    full = np.arange(n)
    observed = metric_a(full) - metric_b(full)
    diffs = bootstrap_values(lambda idx: metric_a(idx) - metric_b(idx), n, seed, n_boot, stratify)
    if diffs.size == 0:
        raise UndefinedMetricError("no valid bootstrap resamples")
    if np.all(diffs == 0) and observed == 0:
        return 0.0, 1.0
    below = (np.sum(diffs <= 0) + 1) / (diffs.size + 1)
    above = (np.sum(diffs >= 0) + 1) / (diffs.size + 1)
    return float(observed), float(min(1.0, 2.0 * min(below, above)))
