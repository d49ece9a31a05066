"""Minibatch training with early stopping on validation loss."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from voxdemog.errors import ConfigError, ContractError, NumericError
from voxdemog.nets import Network
from voxdemog.tensor import Tensor, no_grad
from voxdemog.training.checkpoint import Checkpoint
from voxdemog.training.losses import LOSSES, TASK_LOSS
from voxdemog.training.optim import Adam, AdamState
from voxdemog.training.split import SplitPlan

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 1e-4
    max_epochs: int = 200
    patience: int = 10
    loss: str | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42
    standardize_targets: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.loss is not None and self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    last: Checkpoint | None = None  # final-epoch state, for resuming

    @property
    def best_epoch(self) -> int:
        return self.checkpoint.epoch


class EarlyStopping:
    """Tracks the best validation loss; improvement means a strict decrease."""

    def __init__(self, patience: int, best: float = float("inf")):
        self.patience = patience
        self.best = best
        self.bad_epochs = 0

    def update(self, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def _stack(inputs: Mapping[str, np.ndarray], ids: Sequence[str], dtype) -> Tensor:
    return Tensor(np.stack([inputs[i] for i in ids])[:, None].astype(dtype, copy=False))


def dataset_loss(net: Network, inputs, targets, ids, loss_name: str, batch_size: int) -> float:
    """Mean per-subject loss over ``ids`` in eval mode."""
    loss_fn = LOSSES[loss_name]
    total = 0.0
    dtype = next(net.parameters()).dtype
    with no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = ids[start : start + batch_size]
            out = net(_stack(inputs, chunk, dtype), training=False)
            total += float(loss_fn(out, [targets[i] for i in chunk]).data) * len(chunk)
    return total / len(ids)


def write_loss_log(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss)])


def read_loss_log(path) -> list[EpochRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"])) for r in csv.DictReader(fh)]


def _snapshot(
    net: Network, opt: Adam, epoch: int, best: float, cfg: TrainConfig, loss_name: str, bad_epochs: int = 0
) -> Checkpoint:
    return Checkpoint(
        net_config=net.config.to_dict(),
        state=net.state_dict(),
        epoch=epoch,
        best_val_loss=best,
        train_config={**cfg.to_dict(), "loss": loss_name},
        optimizer={"t": opt.state.t, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                   "bad_epochs": bad_epochs},
        adam_m={k: v.copy() for k, v in opt.state.m.items()},
        adam_v={k: v.copy() for k, v in opt.state.v.items()},
    )


def train(
    net: Network,
    inputs: Mapping[str, np.ndarray],
    targets: Mapping[str, float],
    split: SplitPlan,
    cfg: TrainConfig,
    resume: Checkpoint | None = None,
    history: Sequence[EpochRecord] = (),
    resume_best: Checkpoint | None = None,
) -> TrainResult:
    """Fit ``net`` and return the checkpoint of the best validation epoch.

    ``inputs`` maps subject ids to preprocessed (D, H, W) arrays; ``targets``
    to sex labels or ages. On return ``net`` holds the best-epoch weights.
    With ``resume`` the run continues from that checkpoint's epoch, weights
    and optimizer moments; pass the earlier loss log as ``history`` and the
    earlier best checkpoint as ``resume_best``.
    """
    task = net.config.task
    loss_name = cfg.loss or TASK_LOSS[task]
    if TASK_LOSS[task] != loss_name:
        raise ContractError(f"task {task!r} trains with {TASK_LOSS[task]!r}, not {loss_name!r}")
    train_ids, val_ids = list(split.train), list(split.val)
    if not train_ids or not val_ids:
        raise ContractError("training needs non-empty train and validation sets")
    loss_fn = LOSSES[loss_name]

    opt = Adam(net.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    start_epoch = 0
    stopper = EarlyStopping(cfg.patience)
    if resume is not None:
        net.load_state(resume.state)
        opt.state = AdamState(int(resume.optimizer.get("t", 0)), {k: v.copy() for k, v in resume.adam_m.items()},
                              {k: v.copy() for k, v in resume.adam_v.items()})
        start_epoch = resume.epoch
        stopper.best = resume.best_val_loss
        stopper.bad_epochs = int(resume.optimizer.get("bad_epochs", 0))
    elif task == "age" and cfg.standardize_targets:
        ages = np.array([targets[i] for i in train_ids], dtype=np.float64)
        net.config.target_mean = float(ages.mean())
        net.config.target_scale = float(ages.std()) or 1.0

    history = [r for r in history if r.epoch <= start_epoch]
    best = (resume_best or resume) if resume is not None else _snapshot(net, opt, 0, float("inf"), cfg, loss_name)
    dtype = next(net.parameters()).dtype
    stopped = False
    epoch = start_epoch
    for epoch in range(start_epoch + 1, cfg.max_epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = [train_ids[i] for i in rng.permutation(len(train_ids))]
        running = 0.0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = order[start : start + cfg.batch_size]
            out = net(_stack(inputs, chunk, dtype), training=True, rng=rng)
            loss = loss_fn(out, [targets[i] for i in chunk])
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {b} (subjects {chunk})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += value * len(chunk)
        train_loss = running / len(order)
        val_loss = dataset_loss(net, inputs, targets, val_ids, loss_name, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochRecord(epoch, train_loss, val_loss))
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if stopper.update(val_loss):
            best = _snapshot(net, opt, epoch, val_loss, cfg, loss_name)
        if stopper.should_stop:
            stopped = True
            break
    last = _snapshot(net, opt, epoch, stopper.best, cfg, loss_name, stopper.bad_epochs)
    net.load_state(best.state)
    return TrainResult(best, history, stopped, last)
