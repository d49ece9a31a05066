"""Saliency maps and region-volume correlation analysis."""

from voxdemog.explain.export import axial_mosaic, export_overlay
from voxdemog.explain.regions import (
    LOBES,
    RegionCorrelation,
    RegionInfo,
    RegionTable,
    correlate_volumes,
    load_region_mapping,
    load_region_table,
    region_correlations,
    write_correlations,
)
from voxdemog.explain.saliency import (
    DEFAULT_THRESHOLD,
    DEFAULT_TOP_K,
    SaliencyMap,
    average_maps,
    confidence,
    input_gradients,
    most_confident,
    normalize_attribution,
    saliency,
    saliency_batch,
    threshold_overlay,
    top_k_average,
)

__all__ = [
    "DEFAULT_THRESHOLD", "DEFAULT_TOP_K", "LOBES", "RegionCorrelation", "RegionInfo", "RegionTable",
    "SaliencyMap", "average_maps", "axial_mosaic", "confidence", "correlate_volumes", "export_overlay",
    "input_gradients", "load_region_mapping", "load_region_table", "most_confident",
    "normalize_attribution", "region_correlations", "saliency", "saliency_batch", "threshold_overlay",
    "top_k_average", "write_correlations",
]
