"""Cohort manifests and synthetic cohort generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from voxdemog.errors import ConfigError, FormatError
from voxdemog.volume.nifti import Volume, read_nifti, write_nifti
from voxdemog.volume.phantom import REGIONS, PhantomSpec, generate_phantom, region_volumes
from voxdemog.volume.preprocess import preprocess

MANIFEST_HEADER = ["subject_id", "path", "sex", "age", "cohort"]

# lobe assigned to each phantom region so the table fits the nine-group scheme
PHANTOM_REGION_LOBES = {
    "ventricle": "subcortical",
    "cortex_shell": "frontal",
    "left_hemisphere": "temporal",
    "right_hemisphere": "temporal",
}


@dataclass(frozen=True)
class ManifestRow:
    subject_id: str
    path: str
    sex: int
    age: float
    cohort: str


@dataclass
class CohortManifest:
    rows: list[ManifestRow]
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            if r.subject_id in seen:
                raise FormatError(f"duplicate subject_id {r.subject_id!r}")
            seen.add(r.subject_id)
            if r.sex not in (0, 1):
                raise FormatError(f"{r.subject_id}: sex must be 0 or 1, got {r.sex}")
            if not np.isfinite(r.age):
                raise FormatError(f"{r.subject_id}: age is not finite")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def ids(self) -> list[str]:
        return [r.subject_id for r in self.rows]

    def by_id(self) -> dict[str, ManifestRow]:
        return {r.subject_id: r for r in self.rows}

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else self.root / p

    def check_age_range(self, lo: float, hi: float) -> None:
        bad = [r.subject_id for r in self.rows if not lo <= r.age <= hi]
        if bad:
            raise FormatError(f"ages outside [{lo}, {hi}] for {bad[:5]}")

    def load(self, row: ManifestRow, crop=None, normalize: bool = True) -> np.ndarray:
        return preprocess(read_nifti(self.resolve(row)), crop, normalize).data


def _fmt_age(age: float) -> str:
    return f"{age:.1f}"


def write_manifest(manifest: CohortManifest, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest.rows:
            w.writerow([r.subject_id, r.path, r.sex, _fmt_age(r.age), r.cohort])


def read_manifest(path) -> CohortManifest:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise FormatError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        rows = []
        for rec in reader:
            try:
                rows.append(ManifestRow(rec["subject_id"], rec["path"], int(rec["sex"]), float(rec["age"]), rec["cohort"]))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}: bad row {rec}: {exc}") from exc
    return CohortManifest(rows, path.parent)


def draw_ages(rng: np.random.Generator, n: int, age_range, distribution) -> np.ndarray:
    """Ages from ``"uniform"`` or ``("normal", mean, sd)`` truncated to the range."""
    lo, hi = age_range
    if distribution == "uniform":
        return rng.uniform(lo, hi, size=n)
    if isinstance(distribution, (list, tuple)) and distribution and distribution[0] == "normal":
        _, mu, sd = distribution
        out = np.empty(n)
        filled = 0
        while filled < n:
            draw = rng.normal(mu, sd, size=n)
            draw = draw[(draw >= lo) & (draw <= hi)]
            take = min(n - filled, draw.size)
            out[filled : filled + take] = draw[:take]
            filled += take
        return out
    raise ConfigError(f"unknown age distribution {distribution!r}")


def make_cohort(
    spec: PhantomSpec,
    n: int,
    out_dir,
    sex_ratio: float = 0.5,
    age_distribution="uniform",
    seed: int = 0,
    cohort: str = "phantom",
    write_regions: bool = True,
) -> CohortManifest:
    """Generate ``n`` phantoms under ``out_dir`` and write ``manifest.csv``.

    ``sex_ratio`` is the probability of sex label 1. Also writes
    ``regions.csv`` (per-subject region volumes) and ``region_map.csv``.
    """
    if n < 1:
        raise ConfigError("cohort size must be >= 1")
    if not 0.0 <= sex_ratio <= 1.0:
        raise ConfigError("sex_ratio must lie in [0, 1]")
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 7919])
    sexes = (rng.random(n) < sex_ratio).astype(int)
    ages = np.round(draw_ages(rng, n, spec.age_range, age_distribution), 1)
    ages = np.clip(ages, *spec.age_range)
    subject_seeds = rng.integers(0, 2**31 - 1, size=n)
    width = max(4, len(str(n)))
    rows, region_rows = [], []
    for i in range(n):
        sid = f"{cohort}-{i:0{width}d}"
        vol, labels = generate_phantom(spec, int(sexes[i]), float(ages[i]), int(subject_seeds[i]), return_labels=True)
        rel = f"volumes/{sid}.nii"
        write_nifti(vol, out_dir / rel)
        rows.append(ManifestRow(sid, rel, int(sexes[i]), float(ages[i]), cohort))
        region_rows.append((sid, region_volumes(labels, spec.spacing)))
    manifest = CohortManifest(rows, out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    if write_regions:
        with open(out_dir / "regions.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_id", *REGIONS])
            for sid, vols in region_rows:
                w.writerow([sid, *(f"{vols[r]:.1f}" for r in REGIONS)])
        with open(out_dir / "region_map.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["idp_id", "region_name", "lobe"])
            for r in REGIONS:
                w.writerow([r, r, PHANTOM_REGION_LOBES[r]])
    return manifest


def load_arrays(manifest: CohortManifest, crop=None, normalize: bool = True) -> dict[str, np.ndarray]:
    """Read and preprocess every volume; returns subject_id -> (D, H, W) float32."""
    return {r.subject_id: manifest.load(r, crop, normalize) for r in manifest.rows}


__all__ = [
    "CohortManifest",
    "MANIFEST_HEADER",
    "ManifestRow",
    "Volume",
    "draw_ages",
    "load_arrays",
    "make_cohort",
    "read_manifest",
    "write_manifest",
]
