"""Metrics, paired significance tests, bias correction and subgroup analysis."""

from voxdemog.stats.bias import BiasModel, apply_bias_correction, fit_bias_model
from voxdemog.stats.bootstrap import bootstrap_values, paired_bootstrap_p, percentile_ci
from voxdemog.stats.delong import (
    delong_ci,
    delong_components,
    delong_paired_test,
    delong_variance,
    structural_components,
)
from voxdemog.stats.metrics import auprc, mae, pearson_r, roc_auc, roc_curve
from voxdemog.stats.records import PredictionRecord, by_cohort, read_predictions, write_predictions
from voxdemog.stats.report import (
    EvalReport,
    MetricComparison,
    align_models,
    compare_models,
    correct_records,
    curve_rows,
    evaluate,
    evaluate_records,
    format_table,
    load_schema,
)
from voxdemog.stats.significance import DEFAULT_TIERS, TestResult, bonferroni, tier, tier_thresholds
from voxdemog.stats.subgroups import AGE_BINS, OUT_OF_RANGE, age_bin, stratify
from voxdemog.stats.wilcoxon import signed_rank_test, wilcoxon_signed_rank

__all__ = [
    "AGE_BINS", "OUT_OF_RANGE", "DEFAULT_TIERS", "BiasModel", "EvalReport", "MetricComparison",
    "PredictionRecord", "TestResult", "age_bin", "align_models", "apply_bias_correction", "auprc",
    "bonferroni", "bootstrap_values", "by_cohort", "compare_models", "correct_records", "curve_rows",
    "delong_ci", "delong_components", "delong_paired_test", "delong_variance", "evaluate",
    "evaluate_records", "fit_bias_model", "format_table", "load_schema", "mae", "paired_bootstrap_p",
    "pearson_r", "percentile_ci", "read_predictions", "roc_auc", "roc_curve", "signed_rank_test",
    "stratify", "structural_components", "tier", "tier_thresholds", "wilcoxon_signed_rank",
    "write_predictions",
]
