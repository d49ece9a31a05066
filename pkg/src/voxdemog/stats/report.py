"""Cohort-level evaluation, three-way model comparison and report rendering."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence

import numpy as np

from voxdemog.errors import ContractError, VoxDemogError
from voxdemog.stats.bias import BiasModel, apply_bias_correction
from voxdemog.stats.bootstrap import N_BOOTSTRAP, bootstrap_values, paired_bootstrap_p, percentile_ci
from voxdemog.stats.delong import delong_ci, delong_paired_test
from voxdemog.stats.metrics import auprc, mae, pearson_r, roc_auc, roc_curve
from voxdemog.stats.records import PredictionRecord, by_cohort
from voxdemog.stats.significance import NOT_SIGNIFICANT, TestResult, tier_thresholds
from voxdemog.stats.subgroups import stratify
from voxdemog.stats.wilcoxon import wilcoxon_signed_rank

SCHEMA_VERSION = "1.0"
TASKS = ("sex", "age")
# metric -> larger is better
DIRECTION = {"auc": True, "auprc": True, "mae": False, "pearson_r": True}
AUPRC_NOTE = "AUPRC comparisons use a paired bootstrap test, not DeLong"


def _arrays(records: Sequence[PredictionRecord], task: str) -> dict[str, np.ndarray]:
    if task == "sex":
        if any(r.sex_score is None for r in records):
            raise ContractError("sex evaluation needs sex_score for every record")
        return {
            "y": np.array([r.sex_true for r in records]),
            "s": np.array([r.sex_score for r in records], dtype=np.float64),
        }
    if task == "age":
        if any(r.age_true is None or r.age_pred is None for r in records):
            raise ContractError("age evaluation needs age_true and a prediction for every record")
        return {
            "t": np.array([r.age_true for r in records], dtype=np.float64),
            "p": np.array([r.age_pred for r in records], dtype=np.float64),
        }
    raise ContractError(f"unknown task {task!r}; expected one of {TASKS}")


def _cell(fn: Callable[[], dict]) -> dict:
    try:
        return fn()
    except VoxDemogError as exc:
        return {"value": None, "reason": str(exc)}


def evaluate_records(
    records: Sequence[PredictionRecord], task: str, seed: int = 0, n_boot: int = N_BOOTSTRAP, auc_ci: str = "delong"
) -> dict:
    """Metrics with 95% CIs for one model on one subject set.

    A metric that cannot be computed is reported as ``{"value": None,
    "reason": ...}`` rather than aborting the whole evaluation.
    """
    a = _arrays(records, task)
    n = len(records)
    out: dict = {"n": n}
    if task == "sex":
        y, s = a["y"], a["s"]
        out["n_positive"] = int(y.sum())

        def auc_cell():
            if auc_ci == "delong":
                v, lo, hi = delong_ci(s, y)
            else:
                v = roc_auc(s, y)
                lo, hi = percentile_ci(bootstrap_values(lambda i: roc_auc(s[i], y[i]), n, seed, n_boot, y))
            return {"value": v, "ci": [lo, hi], "ci_method": auc_ci}

        def ap_cell():
            v = auprc(s, y)
            lo, hi = percentile_ci(bootstrap_values(lambda i: auprc(s[i], y[i]), n, seed, n_boot, y))
            return {"value": v, "ci": [lo, hi], "ci_method": "bootstrap"}

        out["metrics"] = {"auc": _cell(auc_cell), "auprc": _cell(ap_cell)}
    else:
        t, p = a["t"], a["p"]

        def mae_cell():
            v = mae(p, t)
            lo, hi = percentile_ci(bootstrap_values(lambda i: mae(p[i], t[i]), n, seed, n_boot))
            return {"value": v, "ci": [lo, hi], "ci_method": "bootstrap"}

        def r_cell():
            v = pearson_r(p, t)
            lo, hi = percentile_ci(bootstrap_values(lambda i: pearson_r(p[i], t[i]), n, seed, n_boot))
            return {"value": v, "ci": [lo, hi], "ci_method": "bootstrap"}

        out["metrics"] = {"mae": _cell(mae_cell), "pearson_r": _cell(r_cell)}
        out["prediction"] = "corrected" if all(r.age_pred_corrected is not None for r in records) else "raw"
    return out


@dataclass
class PairTest:
    model_a: str
    model_b: str
    result: TestResult

    def to_dict(self) -> dict:
        return {"model_a": self.model_a, "model_b": self.model_b, **self.result.to_dict()}


@dataclass
class MetricComparison:
    metric: str
    best: str
    tests: list[PairTest] = field(default_factory=list)
    markers: dict[str, str] = field(default_factory=dict)

    def p_vs_best(self, model: str) -> float:
        for t in self.tests:
            if self.best in (t.model_a, t.model_b) and model in (t.model_a, t.model_b):
                return t.result.p_value
        raise KeyError(model)

    def to_dict(self) -> dict:
        return {"best": self.best, "tests": [t.to_dict() for t in self.tests], "markers": dict(self.markers)}


def align_models(models: Mapping[str, Sequence[PredictionRecord]]) -> dict[str, list[PredictionRecord]]:
    """Sort every model's records by subject id after checking the sets match."""
    names = list(models)
    ids = {m: [r.subject_id for r in models[m]] for m in names}
    ref = set(ids[names[0]])
    problems = []
    for m in names:
        if len(set(ids[m])) != len(ids[m]):
            problems.append(f"{m}: duplicate subject ids")
        extra, missing = set(ids[m]) - ref, ref - set(ids[m])
        if extra:
            problems.append(f"{m}: not in {names[0]}: {sorted(extra)[:10]}")
        if missing:
            problems.append(f"{m}: missing {sorted(missing)[:10]}")
    if problems:
        raise ContractError("subject sets differ across models; " + "; ".join(problems))
    aligned = {m: sorted(models[m], key=lambda r: r.subject_id) for m in names}
    base = aligned[names[0]]
    for m in names[1:]:
        for r0, r in zip(base, aligned[m]):
            if r0.sex_true != r.sex_true or r0.age_true != r.age_true:
                raise ContractError(f"{m}: labels for {r.subject_id} disagree with {names[0]}")
    return aligned


def compare_models(
    models: Mapping[str, Sequence[PredictionRecord]], task: str, seed: int = 0, n_boot: int = N_BOOTSTRAP
) -> dict[str, MetricComparison]:
    """Pairwise tests across models with Bonferroni tiers for k = number of pairs.

    The best model per metric is chosen by point estimate; every other model
    is marked by the tier of its test against the best.
    """
    if len(models) < 2:
        raise ContractError("comparison needs at least two models")
    aligned = align_models(models)
    names = list(aligned)
    pairs = list(itertools.combinations(names, 2))
    thresholds = tier_thresholds(0.05, len(pairs))
    arrays = {m: _arrays(aligned[m], task) for m in names}
    out: dict[str, MetricComparison] = {}
    if task == "sex":
        y = arrays[names[0]]["y"]
        n = y.size
        metric_fns = {"auc": roc_auc, "auprc": auprc}
        for metric, fn in metric_fns.items():
            points = {m: fn(arrays[m]["s"], y) for m in names}
            tests = []
            for a, b in pairs:
                sa, sb = arrays[a]["s"], arrays[b]["s"]
                if metric == "auc":
                    res = delong_paired_test(sa, sb, y)
                else:
                    diff, p = paired_bootstrap_p(
                        lambda i, s=sa: fn(s[i], y[i]), lambda i, s=sb: fn(s[i], y[i]), n, seed, n_boot, y
                    )
                    res = TestResult(diff, p, "paired-bootstrap", n, extra={"n_bootstrap": n_boot, "seed": seed})
                tests.append(PairTest(a, b, res.with_tier(thresholds)))
            out[metric] = _mark(metric, points, tests)
    else:
        t = arrays[names[0]]["t"]
        errs = {m: arrays[m]["p"] - t for m in names}
        points = {m: float(np.abs(errs[m]).mean()) for m in names}
        tests = [PairTest(a, b, wilcoxon_signed_rank(errs[a], errs[b]).with_tier(thresholds)) for a, b in pairs]
        out["mae"] = _mark("mae", points, tests)
    return out


def _mark(metric: str, points: dict[str, float], tests: list[PairTest]) -> MetricComparison:
    pick = max if DIRECTION[metric] else min
    best = pick(points, key=points.__getitem__)
    comp = MetricComparison(metric, best, tests)
    for m in points:
        if m != best:
            for t in tests:
                if {t.model_a, t.model_b} == {m, best}:
                    comp.markers[m] = t.result.tier
    return comp


@dataclass
class EvalReport:
    task: str
    seed: int
    n_bootstrap: int
    models: dict = field(default_factory=dict)
    comparisons: dict = field(default_factory=dict)
    subgroups: dict = field(default_factory=dict)
    bias_model: dict | None = None  # model name -> fitted slope/intercept
    uncorrected: dict | None = None  # per-model metrics on raw predictions when bias-corrected
    notes: list[str] = field(default_factory=list)
    auc_ci_method: str = "delong"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "task": self.task,
            "seed": self.seed,
            "n_bootstrap": self.n_bootstrap,
            "auc_ci_method": self.auc_ci_method,
            "models": self.models,
            "comparisons": self.comparisons,
            "subgroups": self.subgroups,
            "bias_model": self.bias_model,
            "uncorrected": self.uncorrected,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)


def evaluate(
    records: Sequence[PredictionRecord] | Mapping[str, Sequence[PredictionRecord]],
    task: str,
    seed: int = 0,
    n_boot: int = N_BOOTSTRAP,
    subgroups: bool = False,
    auc_ci: str = "delong",
) -> EvalReport:
    """Evaluate one model (a record list) or several (name -> records).

    Metrics are computed per cohort; with two or more models each cohort also
    gets pairwise comparisons. ``subgroups`` adds age-bin strata for the sex
    task and sex strata for the age task.
    """
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}; expected one of {TASKS}")
    models = {"model": list(records)} if not isinstance(records, Mapping) else {k: list(v) for k, v in records.items()}
    if not models or any(not v for v in models.values()):
        raise ContractError("evaluation needs at least one non-empty record set")
    rep = EvalReport(task, seed, n_boot, auc_ci_method=auc_ci)
    for name, recs in models.items():
        rep.models[name] = {c: evaluate_records(rs, task, seed, n_boot, auc_ci) for c, rs in sorted(by_cohort(recs).items())}
        if subgroups:
            scheme = "age_bins" if task == "sex" else "sex"
            rep.subgroups[name] = {}
            for c, rs in sorted(by_cohort(recs).items()):
                groups = stratify(rs, scheme)
                rep.subgroups[name][c] = {
                    g: (evaluate_records(grs, task, seed, n_boot, auc_ci) if grs else {"n": 0})
                    for g, grs in groups.items()
                }
    if len(models) >= 2:
        cohorts = by_cohort(next(iter(models.values())))
        for c in sorted(cohorts):
            per = {m: by_cohort(recs).get(c, []) for m, recs in models.items()}
            rep.comparisons[c] = {k: v.to_dict() for k, v in compare_models(per, task, seed, n_boot).items()}
        if task == "sex":
            rep.notes.append(AUPRC_NOTE)
    return rep


def correct_records(records: Sequence[PredictionRecord], model: BiasModel) -> list[PredictionRecord]:
    """Copies of ``records`` with age_pred_corrected filled from ``model``."""
    raw = np.array([r.age_pred_raw for r in records], dtype=np.float64)
    corrected = apply_bias_correction(model, raw)
    return [
        PredictionRecord(r.subject_id, r.cohort, r.sex_true, r.sex_score, r.age_true, r.age_pred_raw, float(c))
        for r, c in zip(records, corrected)
    ]


def _fmt_metric(cell: dict, digits: int, marker: str = "") -> str:
    if cell.get("value") is None:
        return "n/a"
    lo, hi = cell["ci"]
    text = f"{cell['value']:.{digits}f} ({lo:.{digits}f}-{hi:.{digits}f})"
    return f"{text} {marker}" if marker else text


def format_table(report: EvalReport | dict) -> str:
    """Plain-text table: one row per cohort and model, CIs in brackets, tier markers appended."""
    d = report.to_dict() if isinstance(report, EvalReport) else report
    metrics = [("auc", "AUC (95% CI)", 3), ("auprc", "AUPRC (95% CI)", 3)]
    if d["task"] == "age":
        metrics = [("mae", "MAE (95% CI)", 2), ("pearson_r", "Pearson r (95% CI)", 3)]
    rows = [["Cohort", "Model"] + [title for _, title, _ in metrics]]
    cohorts = sorted({c for per in d["models"].values() for c in per})
    for c in cohorts:
        for m, per in d["models"].items():
            if c not in per:
                continue
            row = [c, m]
            for key, _, digits in metrics:
                marker = d["comparisons"].get(c, {}).get(key, {}).get("markers", {}).get(m, "")
                row.append(_fmt_metric(per[c]["metrics"][key], digits, marker))
            rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    if d["comparisons"]:
        lines.append("")
        lines.append(f"markers vs best model: {NOT_SIGNIFICANT} p > 0.017, * p < 0.017, ** p < 0.003, *** p < 0.0003")
    for note in d.get("notes", []):
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def curve_rows(models: Mapping[str, Sequence[PredictionRecord]], task: str) -> list[dict]:
    """ROC points (sex) or per-subject scatter points (age) for plotting."""
    rows = []
    for name, recs in models.items():
        for c, rs in sorted(by_cohort(recs).items()):
            a = _arrays(rs, task)
            if task == "sex":
                if np.unique(a["y"]).size < 2:
                    continue
                fpr, tpr = roc_curve(a["s"], a["y"])
                rows += [{"model": name, "cohort": c, "fpr": float(f), "tpr": float(t)} for f, t in zip(fpr, tpr)]
            else:
                rows += [
                    {"model": name, "cohort": c, "subject_id": r.subject_id, "age_true": r.age_true, "age_pred": r.age_pred}
                    for r in rs
                ]
    return rows


def load_schema() -> dict:
    return json.loads(resources.files("voxdemog.stats").joinpath("eval_report.schema.json").read_text("utf-8"))
