"""Volume I/O, preprocessing, and synthetic phantom cohorts."""

from voxdemog.volume.cohort import (
    MANIFEST_HEADER,
    CohortManifest,
    ManifestRow,
    load_arrays,
    make_cohort,
    read_manifest,
    write_manifest,
)
from voxdemog.volume.nifti import Volume, read_nifti, write_nifti
from voxdemog.volume.phantom import (
    LABELS,
    REGIONS,
    PhantomSpec,
    generate_phantom,
    handcrafted_features,
    phantom_labels,
    region_volumes,
)
from voxdemog.volume.preprocess import center_crop, preprocess, znormalize

__all__ = [
    "LABELS",
    "MANIFEST_HEADER",
    "REGIONS",
    "CohortManifest",
    "ManifestRow",
    "PhantomSpec",
    "Volume",
    "center_crop",
    "generate_phantom",
    "handcrafted_features",
    "load_arrays",
    "make_cohort",
    "phantom_labels",
    "preprocess",
    "read_manifest",
    "read_nifti",
    "region_volumes",
    "write_manifest",
    "write_nifti",
    "znormalize",
]
