"""Splits, losses, optimisation, early stopping and checkpoints."""

from voxdemog.training.checkpoint import Checkpoint, load_checkpoint, load_into, restore_network, save_checkpoint
from voxdemog.training.losses import TASK_LOSS, bce_with_logits, mae_loss
from voxdemog.training.optim import Adam, AdamState, adam_step
from voxdemog.training.split import SplitPlan, split_dataset
from voxdemog.training.trainer import (
    EarlyStopping,
    EpochRecord,
    TrainConfig,
    TrainResult,
    dataset_loss,
    read_loss_log,
    train,
    write_loss_log,
)

__all__ = [
    "Adam",
    "AdamState",
    "Checkpoint",
    "EarlyStopping",
    "EpochRecord",
    "SplitPlan",
    "TASK_LOSS",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "bce_with_logits",
    "dataset_loss",
    "load_checkpoint",
    "load_into",
    "mae_loss",
    "read_loss_log",
    "restore_network",
    "save_checkpoint",
    "split_dataset",
    "train",
    "write_loss_log",
]
