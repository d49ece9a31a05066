"""3D Swin transformer: windowed self-attention with cyclic half-window shifts.

Token grids are laid out N x D x H x W x C. A block attends within
non-overlapping cubic windows; every second block first rolls the grid by
``-shift`` on each spatial axis so that neighbouring windows exchange
information, and masks token pairs that only became neighbours by wrapping.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from voxdemog.errors import ConfigError, DimensionError, GeometryError
from voxdemog.nets.base import NetConfig, Network
from voxdemog.tensor import (
    Tensor,
    dropout,
    gelu,
    layernorm,
    linear,
    matmul,
    pad,
    roll,
    softmax,
    take_rows,
    transpose,
)

MASK_VALUE = -1e9


def window_partition(x: Tensor, w: int) -> Tensor:
    """(N, D, H, W, C) -> (N * nw, w^3, C); windows ordered row-major per sample."""
    n, d, h, wd, c = x.shape
    if d % w or h % w or wd % w:
        raise GeometryError(f"grid {(d, h, wd)} is not divisible by window {w}")
    x = x.reshape(n, d // w, w, h // w, w, wd // w, w, c)
    x = transpose(x, (0, 1, 3, 5, 2, 4, 6, 7))
    return x.reshape(-1, w**3, c)


def window_reverse(windows: Tensor, w: int, grid: tuple[int, int, int]) -> Tensor:
    """Inverse of ``window_partition``."""
    d, h, wd = grid
    c = windows.shape[-1]
    n = windows.shape[0] // ((d // w) * (h // w) * (wd // w))
    x = windows.reshape(n, d // w, h // w, wd // w, w, w, w, c)
    x = transpose(x, (0, 1, 4, 2, 5, 3, 6, 7))
    return x.reshape(n, d, h, wd, c)


@lru_cache(maxsize=None)
def relative_position_index(w: int) -> np.ndarray:
    """(w^3, w^3) indices into a ((2w-1)^3, heads) bias table."""
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), np.arange(w), indexing="ij")).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (w - 1)
    span = 2 * w - 1
    return rel[0] * span * span + rel[1] * span + rel[2]


def _region_ids(grid: tuple[int, int, int], real: tuple[int, int, int], w: int, shift: int) -> np.ndarray:
    """Label every token of the rolled grid so that only equal labels may attend.

    Per axis a token is "wrapped" when the roll carried it past the end of
    the grid; padded tokens get their own label.
    """
    labels = np.zeros(grid, dtype=np.int64)
    for axis, (g, r) in enumerate(zip(grid, real)):
        pos = np.arange(g)
        orig = (pos + shift) % g
        wrapped = (pos >= g - shift) if shift else np.zeros(g, dtype=bool)
        is_pad = orig >= r
        code = wrapped.astype(np.int64) + 2 * is_pad.astype(np.int64)
        shape = [1, 1, 1]
        shape[axis] = g
        labels = labels * 4 + code.reshape(shape)
    return labels


@lru_cache(maxsize=None)
def _mask_cached(grid: tuple[int, int, int], real: tuple[int, int, int], w: int, shift: int) -> np.ndarray | None:
    if shift == 0 and grid == real:
        return None
    ids = _region_ids(grid, real, w, shift)
    d, h, wd = grid
    win = ids.reshape(d // w, w, h // w, w, wd // w, w).transpose(0, 2, 4, 1, 3, 5).reshape(-1, w**3)
    return np.where(win[:, :, None] == win[:, None, :], 0.0, MASK_VALUE)


def shifted_attention_mask(grid, w: int, shift: int, real=None) -> np.ndarray:
    """Additive (num_windows, w^3, w^3) mask for a rolled token grid.

    Pairs that only share a window because of the cyclic roll, or that mix
    padding with real tokens, get a large negative value; all others 0.
    """
    grid = tuple(int(g) for g in grid)
    real = grid if real is None else tuple(int(r) for r in real)
    if not 0 <= shift < w:
        raise GeometryError(f"shift {shift} must lie in [0, {w})")
    if any(g % w for g in grid):
        raise GeometryError(f"grid {grid} is not divisible by window {w}")
    m = _mask_cached(grid, real, w, shift)
    if m is None:
        nw = int(np.prod([g // w for g in grid]))
        return np.zeros((nw, w**3, w**3))
    return m


def window_attention(
    windows: Tensor,
    qkv_w: Tensor,
    qkv_b: Tensor,
    proj_w: Tensor,
    proj_b: Tensor,
    bias_table: Tensor,
    rel_index: np.ndarray,
    heads: int,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Multi-head self-attention inside each window: (B, T, C) -> (B, T, C)."""
    b, t, c = windows.shape
    if c % heads:
        raise DimensionError(f"dim {c} not divisible by {heads} heads")
    hd = c // heads
    qkv = linear(windows, qkv_w, qkv_b).reshape(b, t, 3, heads, hd)
    qkv = transpose(qkv, (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = matmul(q * (hd**-0.5), transpose(k, (0, 1, 3, 2)))
    bias = take_rows(bias_table, rel_index.reshape(-1)).reshape(t, t, heads)
    scores = scores + transpose(bias, (2, 0, 1)).reshape(1, heads, t, t)
    if mask is not None:
        nw = mask.shape[0]
        m = Tensor(mask.reshape(1, nw, 1, t, t), dtype=scores.dtype)
        scores = (scores.reshape(b // nw, nw, heads, t, t) + m).reshape(b, heads, t, t)
    attn = softmax(scores, axis=-1)
    out = transpose(matmul(attn, v), (0, 2, 1, 3)).reshape(b, t, c)
    return linear(out, proj_w, proj_b)


def _ceil_to(n: int, m: int) -> int:
    return -(-n // m) * m


def stage_layout(cfg: NetConfig) -> list[dict]:
    """Per-stage token grid side, effective window, shift and padded side."""
    e, p = cfg.input_extent, cfg.patch
    if e % p and not cfg.allow_padding:
        raise GeometryError(f"input extent {e} is not divisible by patch {p}")
    side = _ceil_to(e, p) // p
    layout = []
    for i in range(len(cfg.depths)):
        if i > 0:
            if side % 2 and not cfg.allow_padding:
                raise GeometryError(f"stage {i + 1}: odd grid {side} cannot be merged")
            side = _ceil_to(side, 2) // 2
        if side < 1:
            raise GeometryError("token grid collapsed")
        w = min(cfg.window, side)
        shift = w // 2 if side > w else 0
        padded = _ceil_to(side, w)
        if padded != side and not cfg.allow_padding:
            raise GeometryError(f"stage {i + 1}: grid {side} is not divisible by window {w}")
        layout.append(dict(side=side, window=w, shift=shift, padded=padded))
    return layout


class Swin3D(Network):
    def __init__(self, cfg: NetConfig):
        super().__init__(cfg)
        if cfg.arch != "swin3d":
            raise ConfigError(f"Swin3D built from arch {cfg.arch!r}")
        dims, depths, heads = cfg.channels, cfg.depths, cfg.heads
        if not (len(dims) == len(depths) == len(heads) >= 1):
            raise ConfigError("swin3d needs equal-length channels, depths and heads")
        for i in range(1, len(dims)):
            if dims[i] != 2 * dims[i - 1]:
                raise ConfigError(f"swin3d stage dims must double: {dims}")
        for d, h in zip(dims, heads):
            if d % h:
                raise ConfigError(f"dim {d} not divisible by {h} heads")
        self.layout = stage_layout(cfg)
        p = cfg.patch
        self.trunc_normal("patch_embed.weight", (dims[0], cfg.in_channels * p**3))
        self.zeros("patch_embed.bias", (dims[0],))
        hidden = lambda c: int(round(c * cfg.mlp_ratio))  # noqa: E731
        for i, (c, depth, nh) in enumerate(zip(dims, depths, heads)):
            if i > 0:
                self.add_layernorm(f"merge{i}.norm", 4 * c)
                self.add_linear(f"merge{i}.reduction", 4 * c, c, bias=False, init="trunc")
            w = self.layout[i]["window"]
            for j in range(depth):
                name = f"stage{i + 1}.block{j + 1}"
                self.add_layernorm(f"{name}.norm1", c)
                self.add_linear(f"{name}.attn.qkv", c, 3 * c, init="trunc")
                self.add_linear(f"{name}.attn.proj", c, c, init="trunc")
                self.trunc_normal(f"{name}.attn.rel_bias", ((2 * w - 1) ** 3, nh))
                self.add_layernorm(f"{name}.norm2", c)
                self.add_linear(f"{name}.mlp.fc1", c, hidden(c), init="trunc")
                self.add_linear(f"{name}.mlp.fc2", hidden(c), c, init="trunc")
        self.add_layernorm("final.norm", dims[-1])
        self.add_head(dims[-1])

    def _ln(self, name: str, x: Tensor) -> Tensor:
        return layernorm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"])

    def patch_embed(self, x: Tensor) -> Tensor:
        cfg = self.config
        p = cfg.patch
        e = x.shape[2]
        padded = _ceil_to(e, p)
        if padded != e:
            x = pad(x, [(0, 0), (0, 0)] + [(0, padded - e)] * 3)
        g = padded // p
        n, cin = x.shape[:2]
        x = x.reshape(n, cin, g, p, g, p, g, p)
        x = transpose(x, (0, 2, 4, 6, 1, 3, 5, 7)).reshape(n, g, g, g, cin * p**3)
        return self.linear("patch_embed", x)

    def patch_merge(self, i: int, x: Tensor) -> Tensor:
        n, s, _, _, c = x.shape
        if s % 2:
            x = pad(x, [(0, 0), (0, 1), (0, 1), (0, 1), (0, 0)])
            s += 1
        h = s // 2
        x = x.reshape(n, h, 2, h, 2, h, 2, c)
        x = transpose(x, (0, 1, 3, 5, 2, 4, 6, 7)).reshape(n, h, h, h, 8 * c)
        return self.linear(f"merge{i}.reduction", self._ln(f"merge{i}.norm", x))

    def block(self, i: int, j: int, x: Tensor) -> Tensor:
        lay = self.layout[i]
        name = f"stage{i + 1}.block{j + 1}"
        w, side, padded = lay["window"], lay["side"], lay["padded"]
        shift = lay["shift"] if j % 2 else 0
        h = self._ln(f"{name}.norm1", x)
        if padded != side:
            h = pad(h, [(0, 0)] + [(0, padded - side)] * 3 + [(0, 0)])
        if shift:
            h = roll(h, (-shift,) * 3, (1, 2, 3))
        grid = (padded,) * 3
        mask = _mask_cached(grid, (side,) * 3, w, shift)
        p = self.params
        win = window_attention(
            window_partition(h, w),
            p[f"{name}.attn.qkv.weight"],
            p[f"{name}.attn.qkv.bias"],
            p[f"{name}.attn.proj.weight"],
            p[f"{name}.attn.proj.bias"],
            p[f"{name}.attn.rel_bias"],
            relative_position_index(w),
            self.config.heads[i],
            mask,
        )
        h = window_reverse(win, w, grid)
        if shift:
            h = roll(h, (shift,) * 3, (1, 2, 3))
        if padded != side:
            h = h[:, :side, :side, :side, :]
        x = x + h
        m = self._ln(f"{name}.norm2", x)
        m = self.linear(f"{name}.mlp.fc2", gelu(self.linear(f"{name}.mlp.fc1", m)))
        return x + m

    def forward(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        self.check_input(x)
        h = self.patch_embed(x)
        for i, depth in enumerate(self.config.depths):
            if i > 0:
                h = self.patch_merge(i, h)
            for j in range(depth):
                h = self.block(i, j, h)
        h = self._ln("final.norm", h)
        n, c = h.shape[0], h.shape[-1]
        h = h.reshape(n, -1, c).mean(axis=1)
        h = dropout(h, self.config.dropout_p, training, rng)
        return self.head(h)
