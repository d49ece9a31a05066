from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from voxdemog.errors import ContractError


@dataclass(frozen=True)
class SplitPlan:
    train: tuple[str, ...]
    val: tuple[str, ...]
    ratio: tuple[int, int]
    seed: int


def split_dataset(ids, ratio=(2, 1), seed: int = 42) -> SplitPlan:
    """Seeded shuffle, then the first round(n * a / (a + b)) ids go to training."""
    ids = list(ids)
    if len(ids) < 3:
        raise ContractError(f"need at least 3 ids to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ContractError("ids must be unique")
    a, b = ratio
    n_train = int(np.floor(len(ids) * a / (a + b) + 0.5))
    n_train = min(max(n_train, 1), len(ids) - 1)
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    return SplitPlan(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]), (a, b), seed)
