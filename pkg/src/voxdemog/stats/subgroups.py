"""Age-bin and sex stratification of prediction records."""

from __future__ import annotations

from typing import Sequence

from voxdemog.errors import ContractError

AGE_BINS = (("40-50", 40.0, 50.0), ("50-60", 50.0, 60.0), ("60-70", 60.0, 70.0))
OUT_OF_RANGE = "out_of_range"
SEX_GROUPS = {0: "female", 1: "male"}


def age_bin(age: float) -> str:
    """Half-open bins except the last, which includes 70."""
    for name, lo, hi in AGE_BINS:
        if lo <= age < hi or (hi == AGE_BINS[-1][2] and age == hi):
            return name
    return OUT_OF_RANGE


def stratify(records: Sequence, scheme: str) -> dict[str, list]:
    """Group records by ``"age_bins"`` (on age_true) or ``"sex"`` (on sex_true).

    Age-bin output always has the three bins, plus ``out_of_range`` when any
    record falls outside [40, 70].
    """
    if not records:
        raise ContractError("cannot stratify an empty record set")
    if scheme == "age_bins":
        groups: dict[str, list] = {name: [] for name, _, _ in AGE_BINS}
        for r in records:
            groups.setdefault(age_bin(r.age_true), []).append(r)
        return groups
    if scheme == "sex":
        groups = {name: [] for name in SEX_GROUPS.values()}
        for r in records:
            groups[SEX_GROUPS[int(r.sex_true)]].append(r)
        return groups
    raise ContractError(f"unknown stratification scheme {scheme!r}")
