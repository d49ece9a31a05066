"""Input-times-gradient saliency, confident-case averaging and thresholding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from voxdemog.errors import ContractError, DimensionError
from voxdemog.nets import Network
from voxdemog.stats.records import PredictionRecord
from voxdemog.tensor import Tensor

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.1
DEFAULT_TOP_K = 5


@dataclass
class SaliencyMap:
    data: np.ndarray
    subject_ids: tuple[str, ...] = ()
    task: str = ""
    threshold: float | None = None
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DimensionError(f"saliency map must be 3-D, got {self.data.shape}")
        self.subject_ids = tuple(self.subject_ids)


def normalize_attribution(a: np.ndarray) -> tuple[np.ndarray, bool]:
    """|a| / max|a|; an all-zero field stays zero and is flagged degenerate."""
    s = np.abs(np.asarray(a, dtype=np.float64))
    peak = float(s.max()) if s.size else 0.0
    if peak == 0.0 or not np.isfinite(peak):
        return np.zeros_like(s), True
    return s / peak, False


def input_gradients(net: Network, volumes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(outputs, d output / d input) for a (N, D, H, W) or (D, H, W) stack in eval mode.

    In eval mode samples do not interact, so one backward pass of the summed
    output yields every per-sample gradient.
    """
    x = np.asarray(volumes)
    if x.ndim == 3:
        x = x[None]
    dtype = next(net.parameters()).dtype
    inp = Tensor(x[:, None].astype(dtype), requires_grad=True)
    net.check_input(inp)
    out = net(inp, training=False)
    out.sum().backward()
    return out.data.reshape(-1).copy(), inp.grad[:, 0]


def saliency(net: Network, volume: np.ndarray, task: str | None = None, subject_id: str = "") -> SaliencyMap:
    """Max-normalized |x * d y / d x| for one preprocessed volume.

    For the sex head ``y`` is the positive-class logit; for age it is the
    predicted age.
    """
    vol = np.asarray(volume)
    if vol.ndim != 3:
        raise DimensionError(f"saliency expects one (D, H, W) volume, got {vol.shape}")
    _, grad = input_gradients(net, vol)
    data, degenerate = normalize_attribution(vol * grad[0])
    return SaliencyMap(data, (subject_id,) if subject_id else (), task or net.config.task, degenerate=degenerate)


def saliency_batch(net: Network, volumes: Mapping[str, np.ndarray], batch_size: int = 4) -> dict[str, SaliencyMap]:
    ids = list(volumes)
    out = {}
    for start in range(0, len(ids), batch_size):
        chunk = ids[start : start + batch_size]
        x = np.stack([volumes[i] for i in chunk])
        _, grads = input_gradients(net, x)
        for j, sid in enumerate(chunk):
            data, degenerate = normalize_attribution(x[j] * grads[j])
            out[sid] = SaliencyMap(data, (sid,), net.config.task, degenerate=degenerate)
    return out


def confidence(record: PredictionRecord, task: str) -> float:
    """Larger means more confident: |p - 0.5| for sex, -|error| for age."""
    if task == "sex":
        if record.sex_score is None:
            raise ContractError(f"{record.subject_id}: no sex_score")
        return abs(record.sex_score - 0.5)
    if task == "age":
        if record.age_pred is None or record.age_true is None:
            raise ContractError(f"{record.subject_id}: no age prediction")
        return -abs(record.age_pred - record.age_true)
    raise ContractError(f"unknown task {task!r}")


def most_confident(records: Sequence[PredictionRecord], task: str, k: int = DEFAULT_TOP_K) -> list[str]:
    """Ids of the ``k`` most confident records; ties broken by subject id."""
    if k < 1:
        raise ContractError("k must be >= 1")
    ranked = sorted(records, key=lambda r: (-confidence(r, task), r.subject_id))
    if len(ranked) < k:
        log.warning("only %d subjects available for top-%d averaging; using all", len(ranked), k)
    return [r.subject_id for r in ranked[:k]]


def average_maps(maps: Sequence[SaliencyMap], task: str = "") -> SaliencyMap:
    if not maps:
        raise ContractError("nothing to average")
    shapes = {m.data.shape for m in maps}
    if len(shapes) != 1:
        raise DimensionError(f"maps differ in shape: {sorted(shapes)}")
    mean = np.mean([m.data for m in maps], axis=0)
    data, degenerate = normalize_attribution(mean)
    ids = tuple(s for m in maps for s in m.subject_ids)
    return SaliencyMap(data, ids, task or maps[0].task, degenerate=degenerate)


def top_k_average(
    records: Sequence[PredictionRecord], maps: Mapping[str, SaliencyMap], task: str, k: int = DEFAULT_TOP_K
) -> SaliencyMap:
    """Mean of the normalized maps of the k most confident subjects, renormalized to max 1."""
    pool = [r for r in records if r.subject_id in maps]
    missing = len(records) - len(pool)
    if missing:
        log.warning("%d records have no saliency map and are skipped", missing)
    ids = most_confident(pool, task, k)
    return average_maps([maps[i] for i in ids], task)


def threshold_overlay(smap: SaliencyMap, t: float = DEFAULT_THRESHOLD) -> SaliencyMap:
    """Zero every value below ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"threshold {t} outside [0, 1]")
    data = np.where(smap.data < t, 0.0, smap.data)
    return replace(smap, data=data, threshold=t)
