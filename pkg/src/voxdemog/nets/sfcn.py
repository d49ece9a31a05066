"""Lightweight fully convolutional network (conv-bn-pool-relu stages)."""

from __future__ import annotations

import numpy as np

from voxdemog.errors import ConfigError, GeometryError
from voxdemog.nets.base import NetConfig, Network
from voxdemog.tensor import Tensor, dropout, global_avgpool, maxpool3d, relu


def spatial_trace(cfg: NetConfig) -> list[int]:
    """Cube side entering each stage, plus the side leaving the last one."""
    sides = [cfg.input_extent]
    for _ in range(len(cfg.channels) - 1):
        nxt = sides[-1] // 2
        if nxt < 1:
            raise GeometryError(f"SFCN input {cfg.input_extent} collapses below one voxel")
        sides.append(nxt)
    sides.append(sides[-1])
    return sides


class SFCN(Network):
    def __init__(self, cfg: NetConfig):
        super().__init__(cfg)
        if cfg.arch != "sfcn":
            raise ConfigError(f"SFCN built from arch {cfg.arch!r}")
        if not cfg.channels:
            raise ConfigError("SFCN needs at least one stage width")
        self.trace = spatial_trace(cfg)
        cin = cfg.in_channels
        last = len(cfg.channels) - 1
        for i, cout in enumerate(cfg.channels):
            k = 1 if i == last else 3
            self.add_conv(f"stage{i + 1}.conv", cin, cout, k)
            self.add_bn(f"stage{i + 1}.bn", cout)
            cin = cout
        self.add_head(cin)

    def features(self, x: Tensor, training: bool) -> Tensor:
        last = len(self.config.channels) - 1
        for i in range(len(self.config.channels)):
            name = f"stage{i + 1}"
            if i < last:
                x = self.conv(f"{name}.conv", x, padding=1)
                x = self.batchnorm(f"{name}.bn", x, training)
                x = maxpool3d(x, 2, 2)
                x = relu(x)
            else:
                x = self.conv(f"{name}.conv", x)
                x = relu(self.batchnorm(f"{name}.bn", x, training))
        return x

    def forward(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        self.check_input(x)
        h = global_avgpool(self.features(x, training))
        h = dropout(h, self.config.dropout_p, training, rng)
        return self.head(h)
