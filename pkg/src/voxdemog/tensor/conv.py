"""3D convolution and pooling on N x C x D x H x W tensors.

Convolution is cross-correlation. The kernels loop over kernel offsets and
contract each strided input view against the matching weight slice; no
patch matrix is ever materialised.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from voxdemog.errors import DimensionError, GeometryError
from voxdemog.tensor.core import Tensor, make_node


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise DimensionError(f"expected 3 extents, got {v}")
    return v


def output_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int] = (3, 3, 3)
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _triple(self.kernel))
        object.__setattr__(self, "stride", _triple(self.stride))
        object.__setattr__(self, "padding", _triple(self.padding))
        if min(self.kernel + self.stride) < 1 or min(self.padding) < 0:
            raise GeometryError(f"invalid conv geometry {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise DimensionError("channel counts must be >= 1")

    def out_shape(self, spatial: tuple[int, int, int]) -> tuple[int, int, int]:
        out = tuple(
            output_extent(n, k, s, p)
            for n, k, s, p in zip(spatial, self.kernel, self.stride, self.padding)
        )
        if min(out) < 1:
            raise GeometryError(f"conv output extent {out} < 1 for input {spatial}")
        return out


def _window_views(xp: np.ndarray, kernel, stride, out_sp):
    """Yield (offset, view) for each kernel offset; views share memory with xp."""
    (sd, sh, sw), (od, oh, ow) = stride, out_sp
    for i, j, k in product(*(range(n) for n in kernel)):
        view = xp[..., i : i + sd * (od - 1) + 1 : sd, j : j + sh * (oh - 1) + 1 : sh, k : k + sw * (ow - 1) + 1 : sw]
        yield (i, j, k), view


def _window_slices(kernel, stride, out_sp):
    (sd, sh, sw), (od, oh, ow) = stride, out_sp
    for i, j, k in product(*(range(n) for n in kernel)):
        yield (i, j, k), (
            slice(i, i + sd * (od - 1) + 1, sd),
            slice(j, j + sh * (oh - 1) + 1, sh),
            slice(k, k + sw * (ow - 1) + 1, sw),
        )


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlate ``x`` (N,Cin,D,H,W) with ``w`` (Cout,Cin,kd,kh,kw), add ``b``."""
    if x.ndim != 5 or w.ndim != 5:
        raise DimensionError(f"conv3d expects 5-D input and weight, got {x.shape} and {w.shape}")
    n, cin = x.shape[:2]
    cout = w.shape[0]
    if w.shape[1] != cin:
        raise DimensionError(f"weight expects {w.shape[1]} input channels, input has {cin}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"bias shape {b.shape} does not match {cout} output channels")
    spec = ConvSpec(cin, cout, w.shape[2:], stride, padding)
    out_sp = spec.out_shape(x.shape[2:])
    pd, ph, pw = spec.padding
    # channel-major copy so each view reshapes to (Cin, N*S)
    xc = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3, 4))
    if pd or ph or pw:
        xc = np.pad(xc, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    wd = w.data
    cols = n * int(np.prod(out_sp))
    acc = np.zeros((cout, cols), dtype=np.result_type(x.dtype, w.dtype))
    for (i, j, k), view in _window_views(xc, spec.kernel, spec.stride, out_sp):
        acc += wd[:, :, i, j, k] @ view.reshape(cin, cols)
    out = acc.reshape((cout, n) + out_sp).transpose(1, 0, 2, 3, 4)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1, 1)
    out = np.ascontiguousarray(out)

    def _bw(g):
        gc = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4)).reshape(cout, cols)
        gw = np.zeros_like(wd) if w.requires_grad else None
        gxc = np.zeros_like(xc) if x.requires_grad else None
        for (i, j, k), sl in _window_slices(spec.kernel, spec.stride, out_sp):
            if gw is not None:
                gw[:, :, i, j, k] = gc @ xc[(slice(None), slice(None)) + sl].reshape(cin, cols).T
            if gxc is not None:
                gxc[(slice(None), slice(None)) + sl] += (wd[:, :, i, j, k].T @ gc).reshape((cin, n) + out_sp)
        gx = None
        if gxc is not None:
            D, H, W = x.shape[2:]
            gx = np.ascontiguousarray(gxc[:, :, pd : pd + D, ph : ph + H, pw : pw + W].transpose(1, 0, 2, 3, 4))
        gb = g.sum(axis=(0, 2, 3, 4)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_node(out, parents, _bw)


def _pool_geometry(x: Tensor, window, stride, padding):
    if x.ndim != 5:
        raise DimensionError(f"pooling expects a 5-D tensor, got {x.shape}")
    window, stride, padding = _triple(window), _triple(stride), _triple(padding)
    if min(window) < 1 or min(stride) < 1 or min(padding) < 0:
        raise GeometryError(f"invalid pooling geometry window={window} stride={stride}")
    for n, k, p in zip(x.shape[2:], window, padding):
        if k > n + 2 * p:
            raise GeometryError(f"window {k} exceeds padded extent {n + 2 * p}")
    out_sp = tuple(output_extent(n, k, s, p) for n, k, s, p in zip(x.shape[2:], window, stride, padding))
    return window, stride, padding, out_sp


def maxpool3d(x: Tensor, window=2, stride=None, padding=0) -> Tensor:
    """Windowed maximum; ties go to the first offset in D-major scan order."""
    window, stride, padding, out_sp = _pool_geometry(x, window, window if stride is None else stride, padding)
    pd, ph, pw = padding
    xp = x.data
    if pd or ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)), constant_values=-np.inf)
    best = None
    arg = np.zeros(x.shape[:2] + out_sp, dtype=np.int32)
    offsets = []
    for o, ((i, j, k), view) in enumerate(_window_views(xp, window, stride, out_sp)):
        offsets.append((i, j, k))
        if best is None:
            best = view.copy()
            continue
        better = view > best
        best[better] = view[better]
        arg[better] = o

    def _bw(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for o, (_, sl) in enumerate(_window_slices(window, stride, out_sp)):
            hit = arg == o
            if hit.any():
                gxp[(slice(None), slice(None)) + sl] += np.where(hit, g, 0)
        D, H, W = x.shape[2:]
        return (gxp[:, :, pd : pd + D, ph : ph + H, pw : pw + W],)

    return make_node(best, (x,), _bw)


def avgpool3d(x: Tensor, window=2, stride=None) -> Tensor:
    window, stride, _, out_sp = _pool_geometry(x, window, window if stride is None else stride, 0)
    count = float(np.prod(window))
    acc = np.zeros(x.shape[:2] + out_sp, dtype=x.dtype)
    for _, view in _window_views(x.data, window, stride, out_sp):
        acc += view
    acc /= count

    def _bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        share = g / count
        for _, sl in _window_slices(window, stride, out_sp):
            gx[(slice(None), slice(None)) + sl] += share
        return (gx,)

    return make_node(acc, (x,), _bw)


def global_avgpool(x: Tensor) -> Tensor:
    """Mean over every axis after the channel axis: (N, C, ...) -> (N, C)."""
    if x.ndim < 3:
        raise DimensionError(f"global_avgpool expects (N, C, spatial...), got {x.shape}")
    axes = tuple(range(2, x.ndim))
    count = int(np.prod(x.shape[2:]))
    shape = x.shape

    def _bw(g):
        return (np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)) / count, shape).copy(),)

    return make_node(x.data.mean(axis=axes), (x,), _bw)
