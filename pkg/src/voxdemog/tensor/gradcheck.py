"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from voxdemog.tensor.core import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` must be deterministic (reseed any dropout rng inside it); a
    stochastic ``f`` gives meaningless results. ``x`` should be float64.
    ``coords`` restricts the check to flat indices of ``x``.
    """
    x.grad = None
    x.requires_grad = True
    out = f(x)
    out.backward()
    analytic = x.grad.reshape(-1).copy()
    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        numeric = (fp - fm) / (2 * h)
        worst = max(worst, float(relative_error(analytic[i], np.float64(numeric))))
    x.grad = None
    return worst


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    n_samples: int,
    rng: np.random.Generator,
    h: float = 1e-5,
    atol: float = 0.0,
) -> tuple[float, list[tuple[str, int, float]]]:
    """Finite-difference check on a random subsample of scalar parameters.

    Coordinates where both gradients are below ``atol`` count as exact; this
    covers parameters whose true gradient is identically zero (e.g. attention
    key biases, which softmax cancels), where relative error is undefined.
    Returns the worst relative error and the per-coordinate report.
    """
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    grads = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    names = list(params)
    sizes = np.array([params[k].size for k in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    bounds = np.cumsum(sizes)
    report = []
    for flat_i in np.sort(picks):
        which = int(np.searchsorted(bounds, flat_i, side="right"))
        local = int(flat_i - (bounds[which - 1] if which else 0))
        name = names[which]
        arr = params[name].data.reshape(-1)
        orig = arr[local]
        arr[local] = orig + h
        fp = loss_fn().item()
        arr[local] = orig - h
        fm = loss_fn().item()
        arr[local] = orig
        numeric = (fp - fm) / (2 * h)
        a = grads[name].reshape(-1)[local]
        if abs(a) < atol and abs(numeric) < atol:
            err = 0.0
        else:
            err = float(relative_error(a, np.float64(numeric)))
        report.append((name, local, err))
    for p in params.values():
        p.grad = None
    return max((r[2] for r in report), default=0.0), report
