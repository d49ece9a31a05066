"""End-to-end steps behind the command-line verbs.

Each function takes resolved paths and config sections and returns the list
of files it wrote, so the CLI only handles arguments, exit codes and run
manifests.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from voxdemog.config import ExperimentConfig, ModelSection
from voxdemog.errors import ContractError
from voxdemog.explain import (
    average_maps,
    export_overlay,
    load_region_table,
    most_confident,
    region_correlations,
    saliency_batch,
    threshold_overlay,
    write_correlations,
)
from voxdemog.nets import NetConfig, Network, build
from voxdemog.stats import (
    PredictionRecord,
    by_cohort,
    correct_records,
    curve_rows,
    evaluate,
    fit_bias_model,
    format_table,
    read_predictions,
    write_predictions,
)
from voxdemog.tensor import Tensor, no_grad
from voxdemog.training import (
    TrainConfig,
    load_checkpoint,
    read_loss_log,
    restore_network,
    save_checkpoint,
    split_dataset,
    train,
    write_loss_log,
)
from voxdemog.volume import CohortManifest, PhantomSpec, load_arrays, make_cohort, read_manifest, write_manifest
from voxdemog.volume.cohort import ManifestRow
from voxdemog.volume.nifti import read_nifti, write_nifti
from voxdemog.volume.preprocess import preprocess

log = logging.getLogger(__name__)


def net_config(section: ModelSection) -> NetConfig:
    if section.preset == "tiny":
        return NetConfig.tiny(section.arch, section.task, **section.overrides)
    if section.preset == "full":
        return NetConfig.full(section.arch, section.task, **section.overrides)
    return NetConfig.from_dict({"arch": section.arch, "task": section.task, **section.overrides})


def model_name(cfg: NetConfig) -> str:
    return f"{cfg.arch}-{cfg.task}"


# -- synth / preprocess -----------------------------------------------------------


def synth(cfg: ExperimentConfig, out: Path) -> list[Path]:
    if cfg.data.phantom is None or not cfg.data.cohorts:
        raise ContractError("synth needs data.phantom and at least one entry in data.cohorts")
    spec = PhantomSpec(**{**cfg.data.phantom.model_dump(), "age_range": tuple(cfg.data.phantom.age_range)})
    written = []
    for c in cfg.data.cohorts:
        cdir = out / "cohorts" / c.name
        dist = c.age_distribution if isinstance(c.age_distribution, str) else list(c.age_distribution)
        m = make_cohort(spec, c.n, cdir, c.sex_ratio, dist, c.seed, c.name)
        written += [cdir / "manifest.csv", cdir / "regions.csv", cdir / "region_map.csv"]
        written += [m.resolve(r) for r in m.rows]
    return written


def preprocess_manifest(manifest_path: Path, crop, normalize: bool, out: Path) -> list[Path]:
    """Write preprocessed copies of every volume plus a manifest pointing at them."""
    m = read_manifest(manifest_path)
    dest = out / "preprocessed" / manifest_path.parent.name
    (dest / "volumes").mkdir(parents=True, exist_ok=True)
    rows, written = [], []
    for r in m.rows:
        v = preprocess(read_nifti(m.resolve(r)), crop, normalize)
        rel = f"volumes/{r.subject_id}.nii"
        write_nifti(v, dest / rel)
        rows.append(ManifestRow(r.subject_id, rel, r.sex, r.age, r.cohort))
        written.append(dest / rel)
    write_manifest(CohortManifest(rows, dest), dest / "manifest.csv")
    return [dest / "manifest.csv", *written]


# -- training -----------------------------------------------------------------------


def _write_ids(ids: Sequence[str], path: Path) -> None:
    path.write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def read_ids(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def train_model(cfg: ExperimentConfig, manifest_path: Path, out: Path, resume: bool = False) -> tuple[list[Path], dict]:
    """Train one model on ``manifest_path``; writes best/last checkpoints, loss log and split ids."""
    m = read_manifest(manifest_path)
    t = cfg.train
    tcfg = TrainConfig(t.batch_size, t.learning_rate, t.max_epochs, t.patience, None, t.beta1, t.beta2, t.eps, t.seed,
                       t.standardize_targets)
    ncfg = net_config(cfg.model)
    mdir = out / "models" / model_name(ncfg)
    mdir.mkdir(parents=True, exist_ok=True)
    split = split_dataset(m.ids, tuple(t.split_ratio), t.split_seed)
    inputs = load_arrays(m, cfg.preprocess.crop, cfg.preprocess.normalize)
    key = "sex" if ncfg.task == "sex" else "age"
    targets = {r.subject_id: (r.sex if key == "sex" else r.age) for r in m.rows}
    paths = {"best": mdir / "best.vmnd", "last": mdir / "last.vmnd", "log": mdir / "loss_log.csv"}
    if resume:
        for p in paths.values():
            if not p.exists():
                raise FileNotFoundError(f"cannot resume: {p} does not exist")
        last = load_checkpoint(paths["last"])
        best = load_checkpoint(paths["best"])
        net = restore_network(last)
        result = train(net, inputs, targets, split, tcfg, resume=last, history=read_loss_log(paths["log"]),
                       resume_best=best)
    else:
        net = build(ncfg)
        result = train(net, inputs, targets, split, tcfg)
    save_checkpoint(result.checkpoint, paths["best"])
    save_checkpoint(result.last, paths["last"])
    write_loss_log(result.history, paths["log"])
    _write_ids(split.train, mdir / "train_ids.txt")
    _write_ids(split.val, mdir / "val_ids.txt")
    summary = {
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "best_val_loss": result.checkpoint.best_val_loss,
    }
    return [*paths.values(), mdir / "train_ids.txt", mdir / "val_ids.txt"], summary


# -- prediction -------------------------------------------------------------------------


def raw_outputs(net: Network, inputs: dict[str, np.ndarray], ids: Sequence[str], batch_size: int = 8) -> np.ndarray:
    dtype = next(net.parameters()).dtype
    out = []
    with no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = ids[start : start + batch_size]
            x = Tensor(np.stack([inputs[i] for i in chunk])[:, None].astype(dtype))
            out.append(net(x, training=False).data.reshape(-1))
    return np.concatenate(out).astype(np.float64) if out else np.zeros(0)


def predict_records(net: Network, manifest: CohortManifest, ids: Sequence[str] | None = None, crop=None,
                    normalize: bool = True) -> list[PredictionRecord]:
    """One record per subject; sex scores are probabilities, ages are raw predictions."""
    rows = manifest.by_id()
    ids = list(ids) if ids is not None else manifest.ids
    unknown = [i for i in ids if i not in rows]
    if unknown:
        raise ContractError(f"subset ids not in manifest: {unknown[:10]}")
    sub = CohortManifest([rows[i] for i in ids], manifest.root)
    inputs = load_arrays(sub, crop, normalize)
    y = raw_outputs(net, inputs, ids)
    recs = []
    for sid, v in zip(ids, y):
        r = rows[sid]
        if net.config.task == "age":
            recs.append(PredictionRecord(sid, r.cohort, r.sex, None, r.age, float(v)))
        else:
            recs.append(PredictionRecord(sid, r.cohort, r.sex, float(expit(v)), r.age))
    return recs


def predict_files(ckpts: Sequence[Path], manifest_path: Path, out: Path, subset: Path | None, crop,
                  normalize: bool) -> list[Path]:
    m = read_manifest(manifest_path)
    ids = read_ids(subset) if subset is not None else None
    tag = manifest_path.parent.name + (f"-{subset.stem}" if subset is not None else "")
    written = []
    for ck in ckpts:
        net = restore_network(load_checkpoint(ck))
        recs = predict_records(net, m, ids, crop, normalize)
        dest = out / "predictions" / tag / f"{ck.parent.name}.csv"
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_predictions(recs, dest)
        written.append(dest)
    return written


# -- evaluation --------------------------------------------------------------------------


def _write_rows(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _svg(models: dict, task: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "voxdemog"
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    rows = curve_rows(models, task)
    keys = sorted({(r["model"], r["cohort"]) for r in rows})
    for key in keys:
        pts = [r for r in rows if (r["model"], r["cohort"]) == key]
        label = f"{key[0]} ({key[1]})"
        if task == "sex":
            ax.plot([p["fpr"] for p in pts], [p["tpr"] for p in pts], label=label)
        else:
            ax.scatter([p["age_true"] for p in pts], [p["age_pred"] for p in pts], s=6, label=label)
    if task == "sex":
        ax.plot([0, 1], [0, 1], ":", color="grey")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
    else:
        lo = min(min(p["age_true"], p["age_pred"]) for p in rows)
        hi = max(max(p["age_true"], p["age_pred"]) for p in rows)
        ax.plot([lo, hi], [lo, hi], ":", color="grey")
        ax.set_xlabel("true age")
        ax.set_ylabel("predicted age")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def evaluate_files(pred_paths: Sequence[Path], task: str, out: Path, names: Sequence[str] | None = None,
                   subgroups: bool = False, bias_paths: Sequence[Path] = (), svg: bool = False, seed: int = 0,
                   n_boot: int = 1000, auc_ci: str = "delong") -> tuple[list[Path], dict]:
    names = list(names) if names else [p.stem for p in pred_paths]
    if len(names) != len(pred_paths) or len(set(names)) != len(names):
        raise ContractError("model names must be unique and match the prediction files")
    models = {n: read_predictions(p) for n, p in zip(names, pred_paths)}
    bias_models = {}
    if bias_paths:
        if task != "age":
            raise ContractError("bias correction applies to the age task only")
        if len(bias_paths) != len(pred_paths):
            raise ContractError("give one fit-set prediction file per model for --bias-correct")
        for n, bp in zip(names, bias_paths):
            fit = read_predictions(bp)
            bm = fit_bias_model([r.age_pred_raw for r in fit], [r.age_true for r in fit], fit_set=bp.stem)
            bias_models[n] = bm
            models[n] = correct_records(models[n], bm)
    report = evaluate(models, task, seed, n_boot, subgroups, auc_ci)
    if bias_models:
        report.bias_model = {n: {"slope": b.slope, "intercept": b.intercept, "fit_set": b.fit_set}
                             for n, b in bias_models.items()}
        raw = {n: [PredictionRecord(r.subject_id, r.cohort, r.sex_true, r.sex_score, r.age_true, r.age_pred_raw)
                   for r in recs] for n, recs in models.items()}
        raw_rep = evaluate(raw, task, seed, n_boot, False, auc_ci)
        report.uncorrected = raw_rep.models
    dest = out / "eval" / task
    dest.mkdir(parents=True, exist_ok=True)
    files = {"report": dest / "report.json", "table": dest / "table.txt", "curves": dest / "curves.csv"}
    files["report"].write_text(report.to_json() + "\n", encoding="utf-8")
    files["table"].write_text(format_table(report), encoding="utf-8")
    _write_rows(curve_rows(models, task), files["curves"])
    if svg:
        files["svg"] = dest / ("roc.svg" if task == "sex" else "scatter.svg")
        _svg(models, task, files["svg"])
    return list(files.values()), report.to_dict()


# -- explanation ---------------------------------------------------------------------------


def explain_model(ckpt: Path, manifest_path: Path, out: Path, k: int, threshold: float, slice_step: int,
                  predictions: Path | None, subset: Path | None, crop, normalize: bool) -> tuple[list[Path], dict]:
    """Top-k averaged saliency per cohort, exported raw and thresholded."""
    net = restore_network(load_checkpoint(ckpt))
    task = net.config.task
    m = read_manifest(manifest_path)
    ids = read_ids(subset) if subset is not None else m.ids
    if predictions is not None:
        recs = [r for r in read_predictions(predictions) if r.subject_id in set(ids)]
    else:
        recs = predict_records(net, m, ids, crop, normalize)
    rows = m.by_id()
    written, summary = [], {"task": task, "k": k, "threshold": threshold, "cohorts": {}}
    dest = out / "explain" / ckpt.parent.name
    for cohort, crecs in sorted(by_cohort(recs).items()):
        top = most_confident(crecs, task, k)
        vols = load_arrays(CohortManifest([rows[i] for i in top], m.root), crop, normalize)
        maps = saliency_batch(net, vols)
        avg = average_maps([maps[i] for i in top], task)
        spacing = read_nifti(m.resolve(rows[top[0]])).spacing
        written += export_overlay(avg, dest / cohort, "saliency_topk", slice_step, spacing).values()
        thr = threshold_overlay(avg, threshold)
        written += export_overlay(thr, dest / cohort, f"saliency_topk_t{threshold:g}", slice_step, spacing).values()
        half = avg.data.shape[0] // 2
        summary["cohorts"][cohort] = {
            "subjects": list(top),
            "degenerate": avg.degenerate,
            "left_mean": float(avg.data[:half].mean()),
            "right_mean": float(avg.data[half:].mean()),
            "fraction_above_threshold": float((thr.data > 0).mean()),
        }
    dest.mkdir(parents=True, exist_ok=True)
    sp = dest / "saliency_summary.json"
    sp.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [*written, sp], summary


def correlate_files(regions: Path, region_map: Path, predictions: Path, task: str, out: Path) -> tuple[list[Path], dict]:
    table = load_region_table(regions, region_map)
    rows, info = region_correlations(table, read_predictions(predictions), task)
    dest = out / "correlate"
    dest.mkdir(parents=True, exist_ok=True)
    path = dest / f"{predictions.stem}.csv"
    write_correlations(rows, path)
    return [path], info


def resolve(base: Path, p: str | Path | None) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else base / p


def check_exists(p: Path, what: str) -> Path:
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


__all__ = [
    "check_exists", "correlate_files", "evaluate_files", "explain_model", "model_name",
    "net_config", "predict_files", "predict_records", "preprocess_manifest", "raw_outputs", "read_ids",
    "resolve", "synth", "train_model",
]
