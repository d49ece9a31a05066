"""Network configuration, parameter store and shared layer helpers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from voxdemog.errors import ConfigError, DimensionError
from voxdemog.tensor import BatchNormState, Tensor, batchnorm, conv3d, linear

ARCHS = ("sfcn", "densenet3d", "swin3d")
TASKS = ("sex", "age", "binary_generic")


@dataclass
class NetConfig:
    """Architecture hyperparameters.

    ``channels`` means per-stage conv widths for SFCN, per-stage token
    dimensions for Swin (each twice the previous) and is unused by DenseNet,
    which is sized by ``init_features``/``growth``/``depths``.
    """

    arch: str
    task: str = "sex"
    input_extent: int = 32
    in_channels: int = 1
    channels: list[int] = field(default_factory=list)
    depths: list[int] = field(default_factory=list)
    growth: int = 32
    bn_size: int = 4
    compression: float = 0.5
    init_features: int = 64
    patch: int = 4
    window: int = 7
    heads: list[int] = field(default_factory=list)
    mlp_ratio: float = 4.0
    allow_padding: bool = False
    dropout_p: float | None = None
    target_mean: float = 0.0
    target_scale: float = 1.0
    init_seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.dropout_p is None:
            self.dropout_p = 0.5 if self.arch == "sfcn" else 0.0
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.input_extent < 1 or self.in_channels < 1:
            raise ConfigError("input_extent and in_channels must be >= 1")
        if self.target_scale <= 0:
            raise ConfigError("target_scale must be > 0")
        self.channels = [int(c) for c in self.channels]
        self.depths = [int(d) for d in self.depths]
        self.heads = [int(h) for h in self.heads]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown NetConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def tiny(cls, arch: str, task: str = "sex", **overrides) -> "NetConfig":
        """Desk-scale presets used by the tests and the synthetic pipeline."""
        presets = {
            "sfcn": dict(input_extent=32, channels=[4, 8, 8]),
            "densenet3d": dict(input_extent=32, init_features=8, growth=4, depths=[1, 1], bn_size=4),
            "swin3d": dict(input_extent=32, patch=2, window=4, channels=[8, 16], depths=[2, 2], heads=[1, 2]),
        }
        kw = dict(presets[arch])
        kw.update(overrides)
        return cls(arch=arch, task=task, **kw)

    @classmethod
    def full(cls, arch: str, task: str = "sex", **overrides) -> "NetConfig":
        """Full-scale 180^3 presets."""
        presets = {
            "sfcn": dict(input_extent=180, channels=[32, 64, 128, 256, 256, 64]),
            "densenet3d": dict(input_extent=180, init_features=64, growth=32, depths=[6, 12, 24, 16], bn_size=4),
            "swin3d": dict(
                input_extent=180,
                patch=4,
                window=5,
                channels=[48, 96, 192, 384],
                depths=[2, 2, 2, 2],
                heads=[3, 6, 12, 24],
                allow_padding=True,
            ),
        }
        kw = dict(presets[arch])
        kw.update(overrides)
        return cls(arch=arch, task=task, **kw)


class Network:
    """Parameter store plus forward definition; subclasses build the graph."""

    def __init__(self, config: NetConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}
        self._rng = np.random.default_rng(config.init_seed)

    # -- parameter registry -------------------------------------------------
    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        t = Tensor(data.astype(np.float32), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def kaiming(self, name: str, shape: tuple[int, ...]) -> Tensor:
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        return self._add(name, self._rng.uniform(-bound, bound, size=shape))

    def trunc_normal(self, name: str, shape: tuple[int, ...], std: float = 0.02) -> Tensor:
        vals = self._rng.standard_normal(size=shape)
        while True:
            bad = np.abs(vals) > 2.0
            if not bad.any():
                break
            vals[bad] = self._rng.standard_normal(size=int(bad.sum()))
        return self._add(name, vals * std)

    def zeros(self, name: str, shape) -> Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._add(name, np.ones(shape))

    def add_conv(self, name: str, cin: int, cout: int, k: int, bias: bool = False) -> None:
        self.kaiming(f"{name}.weight", (cout, cin, k, k, k))
        if bias:
            self.zeros(f"{name}.bias", (cout,))

    def add_bn(self, name: str, c: int) -> None:
        self.ones(f"{name}.gamma", (c,))
        self.zeros(f"{name}.beta", (c,))
        self.bn[name] = BatchNormState(c)

    def add_linear(self, name: str, fin: int, fout: int, bias: bool = True, init: str = "kaiming") -> None:
        if init == "kaiming":
            self.kaiming(f"{name}.weight", (fout, fin))
        else:
            self.trunc_normal(f"{name}.weight", (fout, fin))
        if bias:
            self.zeros(f"{name}.bias", (fout,))

    def add_layernorm(self, name: str, c: int) -> None:
        self.ones(f"{name}.gamma", (c,))
        self.zeros(f"{name}.beta", (c,))

    def add_head(self, fin: int) -> None:
        self.add_linear("head", fin, 1)

    # -- layer application ------------------------------------------------------
    def conv(self, name: str, x: Tensor, stride=1, padding=0) -> Tensor:
        return conv3d(x, self.params[f"{name}.weight"], self.params.get(f"{name}.bias"), stride, padding)

    def batchnorm(self, name: str, x: Tensor, training: bool) -> Tensor:
        return batchnorm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"], self.bn[name], training)

    def linear(self, name: str, x: Tensor) -> Tensor:
        return linear(x, self.params[f"{name}.weight"], self.params.get(f"{name}.bias"))

    def head(self, features: Tensor) -> Tensor:
        out = self.linear("head", features)
        cfg = self.config
        if cfg.task == "age" and (cfg.target_scale != 1.0 or cfg.target_mean != 0.0):
            out = out * cfg.target_scale + cfg.target_mean
        return out

    # -- state ------------------------------------------------------------------
    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer, in registration order."""
        out = {k: p.data.copy() for k, p in self.params.items()}
        out.update({k: v.copy() for k, v in self.buffers().items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = {k: p.shape for k, p in self.params.items()}
        expected.update({k: v.shape for k, v in self.buffers().items()})
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        if missing or extra:
            raise DimensionError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for k, shape in expected.items():
            if tuple(state[k].shape) != tuple(shape):
                raise DimensionError(f"state entry {k} has shape {state[k].shape}, expected {shape}")
        for k, p in self.params.items():
            p.data = np.array(state[k], dtype=p.dtype)
        for name, st in self.bn.items():
            st.running_mean = np.array(state[f"{name}.running_mean"], dtype=st.running_mean.dtype)
            st.running_var = np.array(state[f"{name}.running_var"], dtype=st.running_var.dtype)

    def to(self, dtype) -> "Network":
        """Cast parameters and buffers in place (float64 for gradient checks)."""
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        for st in self.bn.values():
            st.running_mean = st.running_mean.astype(dtype)
            st.running_var = st.running_var.astype(dtype)
        return self

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def check_input(self, x: Tensor) -> None:
        e = self.config.input_extent
        want = (self.config.in_channels, e, e, e)
        if x.ndim != 5 or tuple(x.shape[1:]) != want:
            raise DimensionError(f"{self.config.arch} expects input (N, {', '.join(map(str, want))}), got {x.shape}")

    def forward(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return self.forward(x, training=training, rng=rng)
