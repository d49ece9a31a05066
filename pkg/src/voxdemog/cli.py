"""Command-line entry point.

    voxdemog VERB [--config FILE] [--seed N] [--deterministic] [--output-dir DIR] ...

Verbs: synth, preprocess, train, predict, evaluate, explain, correlate.

Exit codes: 0 success, 2 config, 3 I/O or format, 4 numeric, 5 shape,
6 contract. Set VOXDEMOG_DEBUG_NAN=1 to check every intermediate tensor for
non-finite values during training.

Numeric modules are imported lazily so that ``--deterministic`` can pin the
BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from voxdemog import __version__
from voxdemog.config import ExperimentConfig, config_hash, load_config, parse_config, with_seed
from voxdemog.errors import ConfigError, VoxDemogError

log = logging.getLogger("voxdemog")

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    p.add_argument("--output-dir", type=Path, help="override config output_dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="voxdemog", description="3-D brain age and sex modelling toolkit")
    parser.add_argument("--version", action="version", version=f"voxdemog {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    sub.add_parser("synth", parents=[common], help="generate phantom cohorts")

    p = sub.add_parser("preprocess", parents=[common], help="write normalized/cropped copies of a cohort")
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--manifest", type=Path, help="training cohort (default: data.manifest or the first synth cohort)")
    p.add_argument("--resume", action="store_true", help="continue from the model's last checkpoint")

    p = sub.add_parser("predict", parents=[common], help="write prediction CSVs")
    p.add_argument("--checkpoint", type=Path, nargs="+", required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--subset", type=Path, help="file with one subject id per line")

    p = sub.add_parser("evaluate", parents=[common], help="metrics, comparisons and subgroup reports")
    p.add_argument("predictions", type=Path, nargs="+")
    p.add_argument("--task", choices=("sex", "age"), required=True)
    p.add_argument("--names", help="comma-separated model names (default: file stems)")
    p.add_argument("--subgroups", action="store_true")
    p.add_argument("--bias-correct", type=Path, nargs="+", default=(), metavar="FIT_PREDICTIONS",
                   help="per-model prediction CSVs of the fit set (e.g. validation)")
    p.add_argument("--svg", action="store_true", help="also write an ROC or scatter plot")

    p = sub.add_parser("explain", parents=[common], help="top-k averaged saliency maps")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--predictions", type=Path, help="reuse predictions instead of recomputing")
    p.add_argument("--subset", type=Path)
    p.add_argument("--k", type=int, help="number of confident cases to average")
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("correlate", parents=[common], help="region-volume correlations")
    p.add_argument("--regions", type=Path, required=True, help="per-subject region volume CSV")
    p.add_argument("--region-map", type=Path, required=True, help="idp_id,region_name,lobe CSV")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--task", choices=("sex", "age"), required=True)
    return parser


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_run_manifest(path: Path, verb: str, cfg: ExperimentConfig, argv: list[str], artifacts, started: str,
                       extra: dict | None = None) -> None:
    """Run record: config hash, seeds, artifact digests, version and timestamps."""
    root = path.parent
    entries = []
    for a in artifacts:
        a = Path(a)
        rel = os.path.relpath(a, root)
        entries.append({"path": rel, "sha256": _sha256(a)})
    doc = {
        "tool": "voxdemog",
        "version": __version__,
        "command": verb,
        "argv": argv,
        "config_hash": config_hash(cfg),
        "config": cfg.model_dump(mode="json"),
        "seeds": {
            "phantom": cfg.data.phantom.seed if cfg.data.phantom else None,
            "cohorts": {c.name: c.seed for c in cfg.data.cohorts},
            "train": cfg.train.seed,
            "split": cfg.train.split_seed,
            "eval": cfg.eval.seed,
        },
        "artifacts": entries,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        doc["result"] = extra
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, VoxDemogError):
        return exc.exit_code
    if isinstance(exc, (OSError, UnicodeDecodeError)):
        return 3
    if isinstance(exc, (FloatingPointError, ArithmeticError)):
        return 4
    return 1


def run(args: argparse.Namespace, argv: list[str]) -> int:
    from voxdemog import pipeline as pl

    started = datetime.now(timezone.utc).isoformat()
    if args.config is not None:
        cfg, base = load_config(args.config)
    else:
        cfg, base = parse_config({}), Path.cwd()
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    out = args.output_dir.resolve() if args.output_dir else pl.resolve(base, cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    crop, norm = cfg.preprocess.crop, cfg.preprocess.normalize
    extra = None
    verb = args.verb

    if verb == "synth":
        files = pl.synth(cfg, out)
        rm = out / "cohorts" / "run_manifest.json"
    elif verb == "preprocess":
        manifest = pl.check_exists(args.manifest.resolve(), "manifest")
        files = pl.preprocess_manifest(manifest, crop, norm, out)
        rm = files[0].parent / "run_manifest.json"
    elif verb == "train":
        if args.manifest is not None:
            manifest = args.manifest.resolve()
        elif cfg.data.manifest is not None:
            manifest = pl.resolve(base, cfg.data.manifest)
        elif cfg.data.cohorts:
            manifest = out / "cohorts" / cfg.data.cohorts[0].name / "manifest.csv"
        else:
            raise ConfigError("no training manifest: pass --manifest or set data.manifest")
        pl.check_exists(manifest, "manifest")
        files, extra = pl.train_model(cfg, manifest, out, resume=args.resume)
        rm = files[0].parent / "run_manifest.json"
    elif verb == "predict":
        ckpts = [pl.check_exists(c.resolve(), "checkpoint") for c in args.checkpoint]
        manifest = pl.check_exists(args.manifest.resolve(), "manifest")
        subset = pl.check_exists(args.subset.resolve(), "subset") if args.subset else None
        files = pl.predict_files(ckpts, manifest, out, subset, crop, norm)
        rm = files[0].parent / "run_manifest.json"
    elif verb == "evaluate":
        preds = [pl.check_exists(p.resolve(), "predictions") for p in args.predictions]
        names = [n.strip() for n in args.names.split(",")] if args.names else None
        bias = [pl.check_exists(p.resolve(), "fit-set predictions") for p in args.bias_correct]
        files, report = pl.evaluate_files(preds, args.task, out, names, args.subgroups, bias, args.svg,
                                          cfg.eval.seed, cfg.eval.n_bootstrap, cfg.eval.auc_ci)
        sys.stdout.write((files[1]).read_text(encoding="utf-8"))
        rm = files[0].parent / "run_manifest.json"
    elif verb == "explain":
        k = args.k if args.k is not None else cfg.explain.k
        t = args.threshold if args.threshold is not None else cfg.explain.threshold
        if not 0.0 <= t <= 1.0:
            raise ConfigError(f"threshold {t} outside [0, 1]")
        if k < 1:
            raise ConfigError("k must be >= 1")
        ck = pl.check_exists(args.checkpoint.resolve(), "checkpoint")
        manifest = pl.check_exists(args.manifest.resolve(), "manifest")
        preds = pl.check_exists(args.predictions.resolve(), "predictions") if args.predictions else None
        subset = pl.check_exists(args.subset.resolve(), "subset") if args.subset else None
        files, extra = pl.explain_model(ck, manifest, out, k, t, cfg.explain.slice_step, preds, subset, crop, norm)
        rm = files[-1].parent / "run_manifest.json"
    elif verb == "correlate":
        files, extra = pl.correlate_files(
            pl.check_exists(args.regions.resolve(), "region table"),
            pl.check_exists(args.region_map.resolve(), "region map"),
            pl.check_exists(args.predictions.resolve(), "predictions"),
            args.task,
            out,
        )
        rm = files[0].parent / "run_manifest.json"
    else:  # pragma: no cover - argparse restricts verbs
        raise ConfigError(f"unknown verb {verb}")
    write_run_manifest(rm, verb, cfg, argv, files, started, extra)
    log.info("%s: wrote %d files; run manifest %s", verb, len(files), rm)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.deterministic:
        for var in THREAD_VARS:
            os.environ[var] = "1"
    try:
        return run(args, argv)
    except Exception as exc:  # map every failure onto the documented exit codes
        code = _exit_code(exc)
        if code == 1:
            raise
        print(f"voxdemog {args.verb}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
