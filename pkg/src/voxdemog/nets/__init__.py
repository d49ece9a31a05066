"""Network builders for the three 3D architectures."""

from voxdemog.errors import ConfigError
from voxdemog.nets.base import ARCHS, TASKS, NetConfig, Network
from voxdemog.nets.densenet import DenseNet3D
from voxdemog.nets.sfcn import SFCN
from voxdemog.nets.swin import (
    Swin3D,
    relative_position_index,
    shifted_attention_mask,
    window_attention,
    window_partition,
    window_reverse,
)


def build_sfcn(cfg: NetConfig) -> SFCN:
    return SFCN(cfg)


def build_densenet3d(cfg: NetConfig) -> DenseNet3D:
    return DenseNet3D(cfg)


def build_swin3d(cfg: NetConfig) -> Swin3D:
    return Swin3D(cfg)


_BUILDERS = {"sfcn": build_sfcn, "densenet3d": build_densenet3d, "swin3d": build_swin3d}


def build(cfg: NetConfig) -> Network:
    try:
        return _BUILDERS[cfg.arch](cfg)
    except KeyError:
        raise ConfigError(f"unknown arch {cfg.arch!r}") from None


__all__ = [
    "ARCHS",
    "TASKS",
    "DenseNet3D",
    "NetConfig",
    "Network",
    "SFCN",
    "Swin3D",
    "build",
    "build_densenet3d",
    "build_sfcn",
    "build_swin3d",
    "relative_position_index",
    "shifted_attention_mask",
    "window_attention",
    "window_partition",
    "window_reverse",
]
