"""3D DenseNet: dense blocks joined by compressing transitions."""

from __future__ import annotations

import numpy as np

from voxdemog.errors import ConfigError, GeometryError
from voxdemog.nets.base import NetConfig, Network
from voxdemog.tensor import Tensor, avgpool3d, concat, dropout, global_avgpool, maxpool3d, output_extent, relu


def channel_plan(cfg: NetConfig) -> list[tuple[int, int]]:
    """(channels entering, channels leaving) for every dense block."""
    plan = []
    c = cfg.init_features
    for b, depth in enumerate(cfg.depths):
        out = c + depth * cfg.growth
        plan.append((c, out))
        c = out if b == len(cfg.depths) - 1 else int(out * cfg.compression)
    return plan


def spatial_trace(cfg: NetConfig) -> list[int]:
    """Cube side after the stem conv, the stem pool, and each transition."""
    s = output_extent(cfg.input_extent, 7, 2, 3)
    sides = [s]
    s = output_extent(s, 3, 2, 1)
    sides.append(s)
    for _ in range(len(cfg.depths) - 1):
        s = s // 2
        sides.append(s)
    if min(sides) < 1:
        raise GeometryError(f"DenseNet input {cfg.input_extent} collapses: {sides}")
    return sides


class DenseNet3D(Network):
    def __init__(self, cfg: NetConfig):
        super().__init__(cfg)
        if cfg.arch != "densenet3d":
            raise ConfigError(f"DenseNet3D built from arch {cfg.arch!r}")
        if cfg.growth < 1 or not 0 < cfg.compression <= 1 or not cfg.depths:
            raise ConfigError("DenseNet needs growth >= 1, compression in (0, 1] and >= 1 block")
        self.trace = spatial_trace(cfg)
        self.plan = channel_plan(cfg)
        self.add_conv("stem.conv", cfg.in_channels, cfg.init_features, 7)
        self.add_bn("stem.bn", cfg.init_features)
        inner = cfg.bn_size * cfg.growth
        for b, (cin, cout) in enumerate(self.plan):
            c = cin
            for layer in range(cfg.depths[b]):
                name = f"block{b + 1}.layer{layer + 1}"
                self.add_bn(f"{name}.bn1", c)
                self.add_conv(f"{name}.conv1", c, inner, 1)
                self.add_bn(f"{name}.bn2", inner)
                self.add_conv(f"{name}.conv2", inner, cfg.growth, 3)
                c += cfg.growth
            if b < len(self.plan) - 1:
                name = f"transition{b + 1}"
                self.add_bn(f"{name}.bn", cout)
                self.add_conv(f"{name}.conv", cout, int(cout * cfg.compression), 1)
        self.add_bn("final.bn", self.plan[-1][1])
        self.add_head(self.plan[-1][1])

    def dense_layer(self, name: str, x: Tensor, training: bool) -> Tensor:
        h = relu(self.batchnorm(f"{name}.bn1", x, training))
        h = self.conv(f"{name}.conv1", h)
        h = relu(self.batchnorm(f"{name}.bn2", h, training))
        return self.conv(f"{name}.conv2", h, padding=1)

    def dense_block(self, b: int, x: Tensor, training: bool) -> Tensor:
        feats = [x]
        for layer in range(self.config.depths[b]):
            inp = feats[0] if len(feats) == 1 else concat(feats, axis=1)
            feats.append(self.dense_layer(f"block{b + 1}.layer{layer + 1}", inp, training))
        return concat(feats, axis=1)

    def forward(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        self.check_input(x)
        h = self.conv("stem.conv", x, stride=2, padding=3)
        h = relu(self.batchnorm("stem.bn", h, training))
        h = maxpool3d(h, 3, 2, 1)
        for b in range(len(self.plan)):
            h = self.dense_block(b, h, training)
            if b < len(self.plan) - 1:
                name = f"transition{b + 1}"
                h = self.conv(f"{name}.conv", relu(self.batchnorm(f"{name}.bn", h, training)))
                h = avgpool3d(h, 2, 2)
        h = relu(self.batchnorm("final.bn", h, training))
        h = dropout(global_avgpool(h), self.config.dropout_p, training, rng)
        return self.head(h)
