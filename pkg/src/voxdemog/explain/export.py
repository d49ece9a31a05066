"""Slice mosaics (PNG) and NIfTI export of saliency maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from voxdemog.explain.saliency import SaliencyMap
from voxdemog.volume import Volume, write_nifti

SLICE_STEP = 10


def axial_mosaic(data: np.ndarray, step: int = SLICE_STEP, columns: int | None = None) -> np.ndarray:
    """Tile axial slices (last axis) at indices 0, step, 2*step, ... into one 2-D image.

    Slices are transposed so that rows run anterior to posterior top-down
    and columns left to right.
    """
    idx = list(range(0, data.shape[2], step))
    tiles = [np.flipud(data[:, :, k].T) for k in idx]
    cols = columns or int(np.ceil(np.sqrt(len(tiles))))
    rows = int(np.ceil(len(tiles) / cols))
    h, w = tiles[0].shape
    out = np.zeros((rows * h, cols * w), dtype=np.float64)
    for n, tile in enumerate(tiles):
        r, c = divmod(n, cols)
        out[r * h : (r + 1) * h, c * w : (c + 1) * w] = tile
    return out


def export_overlay(smap: SaliencyMap, out_dir, stem: str, step: int = SLICE_STEP, spacing=(1.0, 1.0, 1.0)) -> dict[str, Path]:
    """Write ``<stem>.png`` (mosaic, hot colormap on [0, 1]) and ``<stem>.nii``."""
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import image as mpimg

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    png = out_dir / f"{stem}.png"
    nii = out_dir / f"{stem}.nii"
    mpimg.imsave(png, axial_mosaic(smap.data, step), cmap="hot", vmin=0.0, vmax=1.0, metadata={"Software": None})
    write_nifti(Volume(smap.data.astype(np.float32), spacing), nii)
    return {"png": png, "nifti": nii}
