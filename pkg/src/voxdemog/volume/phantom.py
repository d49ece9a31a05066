"""Head-like synthetic phantoms carrying controllable age and sex signal.

Axis 0 runs left to right (RAS convention: low index = left), axis 1
posterior to anterior, axis 2 inferior to superior.

Tissue classes, drawn back to front:
  background 0, cortex shell, interior tissue, ventricles (dark, grow with
  age), and two bright nuclei placed symmetrically; the left nucleus is
  resized by the sex dimorphism amplitude, the right one is fixed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from voxdemog.errors import ConfigError, ContractError
from voxdemog.volume.nifti import Volume

# tissue intensities before noise
BACKGROUND, CORTEX, INTERIOR, VENTRICLE, NUCLEUS = 0.0, 0.6, 1.0, 0.15, 1.6

LABELS = {"background": 0, "cortex_shell": 1, "interior": 2, "ventricle": 3, "left_nucleus": 4, "right_nucleus": 5}

_OUTER_RADII = np.array([0.80, 0.88, 0.78])
_SHELL_FRACTION = 0.80
_VENTRICLE_RADII = np.array([0.13, 0.26, 0.14])
_NUCLEUS_CENTRE = np.array([0.43, 0.12, -0.05])
_NUCLEUS_RADIUS = 0.15


@dataclass(frozen=True)
class PhantomSpec:
    extent: int = 32
    seed: int = 0
    age_range: tuple[float, float] = (40.0, 70.0)
    atrophy_rate: float = 0.004
    ventricle_growth: float = 0.025
    dimorphism: float = 0.3
    noise_sigma: float = 0.05
    head_size_sd: float = 0.04
    spacing: float = 1.0

    def __post_init__(self):
        if self.extent < 16:
            raise ConfigError("phantom extent must be >= 16")
        for name in ("atrophy_rate", "ventricle_growth", "dimorphism", "noise_sigma", "head_size_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        lo, hi = self.age_range
        if not lo < hi:
            raise ConfigError("age_range must be increasing")
        object.__setattr__(self, "age_range", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["age_range"] = list(self.age_range)
        return d


def _grid(extent: int):
    c = (np.arange(extent) + 0.5) / extent * 2.0 - 1.0
    return np.meshgrid(c, c, c, indexing="ij")


def _inside(coords, centre, radii):
    x, y, z = coords
    return ((x - centre[0]) / radii[0]) ** 2 + ((y - centre[1]) / radii[1]) ** 2 + ((z - centre[2]) / radii[2]) ** 2 <= 1.0


def phantom_labels(spec: PhantomSpec, sex: int, age: float, seed: int) -> np.ndarray:
    """Integer tissue-label volume (see ``LABELS``) without noise."""
    if sex not in (0, 1):
        raise ContractError(f"sex must be 0 or 1, got {sex}")
    lo, hi = spec.age_range
    if not lo <= age <= hi:
        raise ContractError(f"age {age} outside phantom range {spec.age_range}")
    rng = np.random.default_rng([spec.seed, seed])
    head = 1.0 + spec.head_size_sd * float(np.clip(rng.standard_normal(), -2.5, 2.5))
    years = age - lo
    outer = _OUTER_RADII * head * (1.0 - spec.atrophy_rate * years)
    vent = _VENTRICLE_RADII * (1.0 + spec.ventricle_growth * years)
    sign = 1.0 if sex == 1 else -1.0
    left_r = _NUCLEUS_RADIUS * (1.0 + spec.dimorphism * sign)
    coords = _grid(spec.extent)
    labels = np.zeros((spec.extent,) * 3, dtype=np.int8)
    labels[_inside(coords, (0, 0, 0), outer)] = LABELS["cortex_shell"]
    labels[_inside(coords, (0, 0, 0), outer * _SHELL_FRACTION)] = LABELS["interior"]
    labels[_inside(coords, (0, 0, 0), vent)] = LABELS["ventricle"]
    left_c = _NUCLEUS_CENTRE * np.array([-1, 1, 1])
    labels[_inside(coords, left_c, (left_r,) * 3)] = LABELS["left_nucleus"]
    labels[_inside(coords, _NUCLEUS_CENTRE, (_NUCLEUS_RADIUS,) * 3)] = LABELS["right_nucleus"]
    return labels


_INTENSITY = np.array([BACKGROUND, CORTEX, INTERIOR, VENTRICLE, NUCLEUS, NUCLEUS], dtype=np.float64)


def generate_phantom(spec: PhantomSpec, sex: int, age: float, seed: int, return_labels: bool = False):
    """Deterministic phantom for one subject; a pure function of its arguments."""
    labels = phantom_labels(spec, sex, age, seed)
    data = _INTENSITY[labels]
    # the noise stream is separate from the anatomy stream so that changing
    # effect sizes never reshuffles the noise
    noise_rng = np.random.default_rng([spec.seed, seed, 1])
    noise = noise_rng.standard_normal(labels.shape)
    if spec.noise_sigma > 0:
        data = data + spec.noise_sigma * noise
    vol = Volume(data.astype(np.float32), (spec.spacing,) * 3)
    return (vol, labels) if return_labels else vol


REGIONS = ("ventricle", "cortex_shell", "left_hemisphere", "right_hemisphere")


def region_volumes(labels: np.ndarray, spacing: float = 1.0) -> dict[str, float]:
    """Region volumes in mm^3; hemispheres count all non-ventricle brain tissue."""
    vox = spacing**3
    brain = (labels > 0) & (labels != LABELS["ventricle"])
    half = labels.shape[0] // 2
    return {
        "ventricle": float((labels == LABELS["ventricle"]).sum() * vox),
        "cortex_shell": float((labels == LABELS["cortex_shell"]).sum() * vox),
        "left_hemisphere": float(brain[:half].sum() * vox),
        "right_hemisphere": float(brain[half:].sum() * vox),
    }


def handcrafted_features(v: Volume) -> np.ndarray:
    """Four scalar summaries: brain size, ventricle size, left and right bright-voxel counts."""
    d = v.data
    half = d.shape[0] // 2
    brain = d > 0.35
    bright = d > 0.5 * (INTERIOR + NUCLEUS)
    dark_inside = (d < 0.5 * (VENTRICLE + CORTEX)) & _inside(_grid(d.shape[0]), (0, 0, 0), (0.5, 0.6, 0.5))
    return np.array(
        [brain.sum(), dark_inside.sum(), bright[:half].sum(), bright[half:].sum()],
        dtype=np.float64,
    )
