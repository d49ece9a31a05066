"""Region-volume tables and their correlation with predictions and labels."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from voxdemog.errors import ContractError, FormatError
from voxdemog.stats.metrics import pearson_r
from voxdemog.stats.records import PredictionRecord

log = logging.getLogger(__name__)

LOBES = ("frontal", "parietal", "occipital", "temporal", "limbic", "insular", "subcortical", "cerebellum", "brain_stem")


@dataclass(frozen=True)
class RegionInfo:
    idp_id: str
    region_name: str
    lobe: str


@dataclass
class RegionTable:
    regions: list[RegionInfo]
    subject_ids: list[str]
    volumes: np.ndarray  # (subjects, regions), mm^3

    def __post_init__(self):
        self.volumes = np.asarray(self.volumes, dtype=np.float64)
        if self.volumes.shape != (len(self.subject_ids), len(self.regions)):
            raise FormatError(f"volume matrix {self.volumes.shape} does not match table axes")
        if not np.all(self.volumes > 0):
            raise FormatError("region volumes must be positive")

    def column(self, idp_id: str) -> np.ndarray:
        return self.volumes[:, [r.idp_id for r in self.regions].index(idp_id)]


def load_region_mapping(path) -> list[RegionInfo]:
    """Read ``idp_id,region_name,lobe``; lobes must come from the nine-group set."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["idp_id", "region_name", "lobe"]:
            raise FormatError(f"{path}: header must be idp_id,region_name,lobe")
        out, seen = [], set()
        for i, row in enumerate(reader, start=2):
            idp, lobe = row["idp_id"].strip(), row["lobe"].strip()
            if lobe not in LOBES:
                raise FormatError(f"{path}:{i}: unknown lobe {lobe!r}")
            if idp in seen:
                raise FormatError(f"{path}:{i}: duplicate idp_id {idp!r}")
            seen.add(idp)
            out.append(RegionInfo(idp, row["region_name"].strip(), lobe))
    if not out:
        raise FormatError(f"{path}: no regions")
    return out


def load_region_table(volumes_path, mapping_path) -> RegionTable:
    """Per-subject volumes CSV (``subject_id`` then one column per idp_id) plus its mapping."""
    mapping = load_region_mapping(mapping_path)
    with open(volumes_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if not cols or cols[0] != "subject_id":
            raise FormatError(f"{volumes_path}: first column must be subject_id")
        missing = [r.idp_id for r in mapping if r.idp_id not in cols]
        if missing:
            raise FormatError(f"{volumes_path}: no column for regions {missing}")
        ids, rows = [], []
        for i, row in enumerate(reader, start=2):
            ids.append(row["subject_id"])
            try:
                rows.append([float(row[r.idp_id]) for r in mapping])
            except ValueError as exc:
                raise FormatError(f"{volumes_path}:{i}: {exc}") from exc
    return RegionTable(mapping, ids, np.array(rows).reshape(len(ids), len(mapping)))


@dataclass(frozen=True)
class RegionCorrelation:
    idp_id: str
    region_name: str
    lobe: str
    r_prediction: float
    r_label: float
    n: int


def correlate_volumes(volumes: np.ndarray, prediction: np.ndarray, label: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column Pearson r of ``volumes`` against ``prediction`` and against ``label``.

    Swapping ``prediction`` and ``label`` swaps the two outputs exactly.
    """
    v = np.asarray(volumes, dtype=np.float64)
    rp = np.array([pearson_r(v[:, j], prediction) for j in range(v.shape[1])])
    rl = np.array([pearson_r(v[:, j], label) for j in range(v.shape[1])])
    return rp, rl


def region_correlations(table: RegionTable, records: Sequence[PredictionRecord], task: str) -> tuple[list[RegionCorrelation], dict]:
    """Region r values ordered by lobe, plus a report of deleted subjects.

    Subjects missing from either side are dropped listwise. The prediction is
    the sex probability or the (corrected if available) predicted age.
    """
    if task not in ("sex", "age"):
        raise ContractError(f"unknown task {task!r}")
    rec = {r.subject_id: r for r in records}
    row_of = {s: i for i, s in enumerate(table.subject_ids)}
    common = [s for s in table.subject_ids if s in rec]
    dropped = {"table_only": len(table.subject_ids) - len(common), "records_only": len(set(rec) - set(row_of))}
    if dropped["table_only"] or dropped["records_only"]:
        log.warning("listwise deletion: %s", dropped)
    if len(common) < 3:
        raise ContractError(f"only {len(common)} subjects shared between region table and predictions")
    if task == "sex":
        pred = np.array([rec[s].sex_score for s in common], dtype=np.float64)
        label = np.array([rec[s].sex_true for s in common], dtype=np.float64)
    else:
        pred = np.array([rec[s].age_pred for s in common], dtype=np.float64)
        label = np.array([rec[s].age_true for s in common], dtype=np.float64)
    vols = table.volumes[[row_of[s] for s in common]]
    rp, rl = correlate_volumes(vols, pred, label)
    out = [
        RegionCorrelation(info.idp_id, info.region_name, info.lobe, float(rp[j]), float(rl[j]), len(common))
        for j, info in enumerate(table.regions)
    ]
    out.sort(key=lambda c: LOBES.index(c.lobe))  # stable: keeps mapping order within a lobe
    return out, {"n_used": len(common), **dropped}


def write_correlations(rows: Sequence[RegionCorrelation], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["idp_id", "region", "lobe", "r_prediction", "r_label"])
        for c in rows:
            w.writerow([c.idp_id, c.region_name, c.lobe, repr(c.r_prediction), repr(c.r_label)])
