"""Per-subject prediction records and their CSV form."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from voxdemog.errors import ContractError, FormatError

COLUMNS = ("subject_id", "cohort", "sex_true", "sex_score", "age_true", "age_pred_raw", "age_pred_corrected")


@dataclass(frozen=True)
class PredictionRecord:
    subject_id: str
    cohort: str
    sex_true: int
    sex_score: float | None = None
    age_true: float | None = None
    age_pred_raw: float | None = None
    age_pred_corrected: float | None = None

    def __post_init__(self):
        if self.sex_true not in (0, 1):
            raise ContractError(f"{self.subject_id}: sex_true must be 0 or 1, got {self.sex_true!r}")
        for name in ("sex_score", "age_true", "age_pred_raw", "age_pred_corrected"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ContractError(f"{self.subject_id}: {name} is not finite")

    @property
    def age_pred(self) -> float | None:
        """Corrected prediction when present, otherwise raw."""
        return self.age_pred_corrected if self.age_pred_corrected is not None else self.age_pred_raw


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_predictions(records: Iterable[PredictionRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])


def _opt_float(row: dict, key: str, where: str) -> float | None:
    raw = (row.get(key) or "").strip()
    if raw == "":
        return None
    try:
        return float(raw)
    except ValueError as exc:
        raise FormatError(f"{where}: column {key} has non-numeric value {raw!r}") from exc


def read_predictions(path) -> list[PredictionRecord]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("subject_id", "cohort", "sex_true") if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}")
        out = []
        for i, row in enumerate(reader, start=2):
            where = f"{path}:{i}"
            try:
                sex = int(row["sex_true"])
            except ValueError as exc:
                raise FormatError(f"{where}: bad sex_true {row['sex_true']!r}") from exc
            out.append(
                PredictionRecord(
                    row["subject_id"],
                    row["cohort"],
                    sex,
                    _opt_float(row, "sex_score", where),
                    _opt_float(row, "age_true", where),
                    _opt_float(row, "age_pred_raw", where),
                    _opt_float(row, "age_pred_corrected", where),
                )
            )
    ids = [r.subject_id for r in out]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate subject ids")
    return out


def by_cohort(records: Sequence[PredictionRecord]) -> dict[str, list[PredictionRecord]]:
    out: dict[str, list[PredictionRecord]] = {}
    for r in records:
        out.setdefault(r.cohort, []).append(r)
    return out
