"""Linear age-bias correction: fit pred = a * true + b, then invert."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from voxdemog.errors import ContractError, DegenerateInputError, DimensionError

MIN_SLOPE = 1e-8


@dataclass(frozen=True)
class BiasModel:
    slope: float
    intercept: float
    fit_set: str = "validation"

    def __post_init__(self):
        if abs(self.slope) <= MIN_SLOPE:
            raise ContractError(f"bias model slope {self.slope} too close to zero for correction")


def fit_bias_model(pred_age, true_age, fit_set: str = "validation") -> BiasModel:
    """Least-squares regression of predicted on true age."""
    p = np.asarray(pred_age, dtype=np.float64).reshape(-1)
    t = np.asarray(true_age, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise DimensionError(f"{p.size} predictions vs {t.size} ages")
    if p.size < 3:
        raise DegenerateInputError("bias fit needs at least 3 subjects")
    dt = t - t.mean()
    stt = float(dt @ dt)
    if stt <= 1e-12 * max(1.0, float(t @ t)):
        raise DegenerateInputError("true ages have no variance")
    slope = float(dt @ (p - p.mean())) / stt
    return BiasModel(slope, float(p.mean() - slope * t.mean()), fit_set)


def apply_bias_correction(model: BiasModel, pred_age) -> np.ndarray:
    if abs(model.slope) <= MIN_SLOPE:
        raise ContractError("refusing to invert a near-zero slope")
    return (np.asarray(pred_age, dtype=np.float64) - model.intercept) / model.slope
