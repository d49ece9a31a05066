"""Volume-level intensity normalisation and centre crop/pad."""

from __future__ import annotations

import numpy as np

from voxdemog.errors import DegenerateInputError, DimensionError, NumericError
from voxdemog.volume.nifti import Volume


def znormalize(v: Volume) -> Volume:
    """Zero mean, unit population std over every voxel, background included."""
    if v.data.size < 2:
        raise DegenerateInputError("z-normalisation needs more than one voxel")
    d = v.data.astype(np.float64)
    if not np.isfinite(d).all():
        raise NumericError(f"z-normalisation input has {int((~np.isfinite(d)).sum())} non-finite voxels")
    mu, sd = d.mean(), d.std()
    if not sd > 0:
        raise DegenerateInputError("z-normalisation of a constant volume")
    return Volume(((d - mu) / sd).astype(np.float32), v.spacing, v.affine.copy())


def crop_window(n: int, target: int) -> tuple[int, int, int]:
    """(start, lead_pad, trail_pad) for one axis."""
    if n >= target:
        return (n - target) // 2, 0, 0
    total = target - n
    return 0, total // 2, total - total // 2


def center_crop(v: Volume, target) -> Volume:
    """Crop (or zero-pad) each axis about its centre to ``target``.

    Cropping starts at floor((n - t) / 2); padding puts the odd extra voxel
    at the trailing end. The affine is shifted so retained voxels keep their
    world coordinates.
    """
    if isinstance(target, (int, np.integer)):
        target = (int(target),) * 3
    target = tuple(int(t) for t in target)
    if len(target) != 3 or min(target) < 1:
        raise DimensionError(f"crop target must be three extents >= 1, got {target}")
    data = v.data
    offset = np.zeros(3)
    slices, pads = [], []
    for axis, (n, t) in enumerate(zip(data.shape, target)):
        start, lead, trail = crop_window(n, t)
        if lead or trail:
            slices.append(slice(None))
            pads.append((lead, trail))
            offset[axis] = -lead
        else:
            slices.append(slice(start, start + t))
            pads.append((0, 0))
            offset[axis] = start
    out = np.pad(data[tuple(slices)], pads)
    shift = np.eye(4)
    shift[:3, 3] = offset
    return Volume(out, v.spacing, v.affine @ shift)


def preprocess(v: Volume, crop=None, normalize: bool = True) -> Volume:
    """Normalise then crop, mirroring the order used for the real cohorts."""
    if normalize:
        v = znormalize(v)
    if crop is not None:
        v = center_crop(v, crop)
    return v
