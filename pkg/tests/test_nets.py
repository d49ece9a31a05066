"""Network builders: shape contracts, geometry, Swin window machinery, gradients."""

import itertools

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from voxdemog.errors import ConfigError, DimensionError, GeometryError
from voxdemog.nets import (
    NetConfig,
    build,
    relative_position_index,
    shifted_attention_mask,
    window_attention,
    window_partition,
    window_reverse,
)
from voxdemog.nets import densenet, sfcn
from voxdemog.nets.swin import MASK_VALUE, stage_layout
from voxdemog.tensor import Tensor, check_parameters, roll

ARCHS = ("sfcn", "densenet3d", "swin3d")


def _x(n, seed=0, extent=32):
    return Tensor(np.random.default_rng(seed).standard_normal((n, 1, extent, extent, extent)).astype(np.float32))


# ---------------------------------------------------------------- shapes


@pytest.mark.parametrize("arch", ARCHS)
@pytest.mark.parametrize("task", ("sex", "age", "binary_generic"))
def test_tiny_output_shape(arch, task):
    net = build(NetConfig.tiny(arch, task))
    assert net(_x(2)).shape == (2, 1)


def test_sfcn_full_trace():
    # 5 pooled stages then a 1x1x1 stage: floor-halving of 180
    assert sfcn.spatial_trace(NetConfig.full("sfcn")) == [180, 90, 45, 22, 11, 5, 5]


def test_sfcn_tiny_parameter_count():
    chans = [4, 8, 8]
    total, cin = 0, 1
    for i, c in enumerate(chans):
        k = 1 if i == len(chans) - 1 else 3
        total += c * cin * k**3 + 2 * c  # conv weight, bn gamma and beta
        cin = c
    total += cin + 1  # head
    assert build(NetConfig.tiny("sfcn")).num_parameters() == total


def test_densenet_channel_plan():
    assert densenet.channel_plan(NetConfig.full("densenet3d")) == [(64, 256), (128, 512), (256, 1024), (512, 1024)]
    cfg = NetConfig.tiny("densenet3d")
    plan = densenet.channel_plan(cfg)
    assert plan == [(8, 12), (6, 10)]
    net = build(cfg)
    h = Tensor(np.random.default_rng(0).standard_normal((1, 8, 8, 8, 8)).astype(np.float32))
    assert net.dense_block(0, h, False).shape[1] == 8 + 1 * 4


def test_densenet_full_trace():
    assert densenet.spatial_trace(NetConfig.full("densenet3d")) == [90, 45, 22, 11, 5]


def _conv_ref(x, w, pad):
    x = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * 3)
    k = w.shape[-1]
    win = sliding_window_view(x, (k, k, k), axis=(2, 3, 4))
    return np.einsum("ncdhwijk,ocijk->nodhw", win, w)


def _bn_ref(x, net, name):
    st = net.bn[name]
    g, b = net.params[f"{name}.gamma"].data, net.params[f"{name}.beta"].data
    shp = (1, -1, 1, 1, 1)
    return (x - st.running_mean.reshape(shp)) / np.sqrt(st.running_var.reshape(shp) + 1e-5) * g.reshape(shp) + b.reshape(shp)


def test_densenet_block_matches_unrolled_graph():
    net = build(NetConfig.tiny("densenet3d", depths=[2, 1])).to(np.float64)
    rng = np.random.default_rng(4)
    for name, st in net.bn.items():
        st.running_mean = rng.normal(0, 0.3, st.running_mean.shape)
        st.running_var = rng.uniform(0.5, 2.0, st.running_var.shape)
        net.params[f"{name}.gamma"].data = rng.uniform(0.5, 1.5, st.running_mean.shape)
        net.params[f"{name}.beta"].data = rng.normal(0, 0.2, st.running_mean.shape)
    x = rng.standard_normal((2, 8, 6, 6, 6))
    got = net.dense_block(0, Tensor(x), training=False).data

    def layer(inp, name):
        h = np.maximum(_bn_ref(inp, net, f"{name}.bn1"), 0)
        h = _conv_ref(h, net.params[f"{name}.conv1.weight"].data, 0)
        h = np.maximum(_bn_ref(h, net, f"{name}.bn2"), 0)
        return _conv_ref(h, net.params[f"{name}.conv2.weight"].data, 1)

    f1 = layer(x, "block1.layer1")
    f2 = layer(np.concatenate([x, f1], axis=1), "block1.layer2")
    want = np.concatenate([x, f1, f2], axis=1)
    assert want.shape[1] == 8 + 2 * 4
    assert np.max(np.abs(got - want)) < 1e-5


# ---------------------------------------------------------------- Swin windows


def test_window_partition_counts_and_roundtrip():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 4, 4, 4, 3)))
    win = window_partition(x, 2)
    assert win.shape == (2 * 8, 8, 3)
    back = window_reverse(win, 2, (4, 4, 4))
    assert np.array_equal(back.data, x.data)


def test_window_partition_index_arithmetic():
    grid = np.arange(64, dtype=np.float64).reshape(1, 4, 4, 4, 1)
    win = window_partition(Tensor(grid), 2).data[:, :, 0]
    # window (1,0,0) in a 2x2x2 window lattice, slot (1,0,1) in a 2x2x2 window
    assert win[1 * 4 + 0 * 2 + 0, 1 * 4 + 0 * 2 + 1] == grid[0, 3, 0, 1, 0]
    # exhaustive: every token lands in window (d//w, h//w, w//w), slot (d%w, h%w, w%w)
    for d, h, w in itertools.product(range(4), repeat=3):
        wi = (d // 2) * 4 + (h // 2) * 2 + (w // 2)
        si = (d % 2) * 4 + (h % 2) * 2 + (w % 2)
        assert win[wi, si] == grid[0, d, h, w, 0]


def test_window_partition_rejects_indivisible_grid():
    with pytest.raises(GeometryError):
        window_partition(Tensor(np.zeros((1, 5, 4, 4, 2))), 2)


def test_relative_position_index_exhaustive_w2():
    w = 2
    idx = relative_position_index(w)
    span = 2 * w - 1
    assert idx.shape == (w**3, w**3)
    coords = list(itertools.product(range(w), repeat=3))
    seen = {}
    for i, ci in enumerate(coords):
        for j, cj in enumerate(coords):
            rel = tuple(a - b for a, b in zip(ci, cj))
            want = (rel[0] + w - 1) * span**2 + (rel[1] + w - 1) * span + (rel[2] + w - 1)
            assert idx[i, j] == want
            assert seen.setdefault(rel, want) == want
    assert len(set(seen.values())) == len(seen) == span**3
    assert idx.min() == 0 and idx.max() == span**3 - 1


def test_bias_table_size_per_head():
    net = build(NetConfig.tiny("swin3d"))
    assert net.params["stage1.block1.attn.rel_bias"].shape == ((2 * 4 - 1) ** 3, 1)
    assert net.params["stage2.block2.attn.rel_bias"].shape == ((2 * 4 - 1) ** 3, 2)


def _attn_params(c, heads, w, seed):
    rng = np.random.default_rng(seed)
    return dict(
        qkv_w=rng.normal(0, 0.4, (3 * c, c)),
        qkv_b=rng.normal(0, 0.1, 3 * c),
        proj_w=rng.normal(0, 0.4, (c, c)),
        proj_b=rng.normal(0, 0.1, c),
        table=rng.normal(0, 0.5, ((2 * w - 1) ** 3, heads)),
    )


def _dense_msa(tokens, coords, p, heads, w, allowed=None):
    """Plain multi-head attention over a token list with coordinate-based bias."""
    t, c = tokens.shape
    hd = c // heads
    qkv = tokens @ p["qkv_w"].T + p["qkv_b"]
    q, k, v = qkv[:, :c], qkv[:, c : 2 * c], qkv[:, 2 * c :]
    span = 2 * w - 1
    out = np.zeros((t, c))
    for hh in range(heads):
        sl = slice(hh * hd, (hh + 1) * hd)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(hd)
        for i in range(t):
            for j in range(t):
                r = coords[i] - coords[j] + (w - 1)
                s[i, j] += p["table"][r[0] * span * span + r[1] * span + r[2], hh]
        if allowed is not None:
            s = np.where(allowed, s, -np.inf)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        out[:, sl] = (s / s.sum(axis=1, keepdims=True)) @ v[:, sl]
    return out @ p["proj_w"].T + p["proj_b"]


def _call_attention(windows, p, heads, w, mask=None):
    return window_attention(
        Tensor(windows), Tensor(p["qkv_w"]), Tensor(p["qkv_b"]), Tensor(p["proj_w"]), Tensor(p["proj_b"]),
        Tensor(p["table"]), relative_position_index(w), heads, mask,
    ).data


def test_single_window_equals_dense_attention():
    w, c, heads = 3, 6, 2
    rng = np.random.default_rng(1)
    grid = rng.standard_normal((1, w, w, w, c))
    p = _attn_params(c, heads, w, 2)
    got = window_reverse(Tensor(_call_attention(window_partition(Tensor(grid), w).data, p, heads, w)), w, (w,) * 3)
    coords = np.array(list(itertools.product(range(w), repeat=3)))
    want = _dense_msa(grid.reshape(-1, c), coords, p, heads, w).reshape(grid.shape)
    assert np.max(np.abs(got.data - want)) < 1e-5


def test_zero_shift_mask_is_zero():
    m = shifted_attention_mask((4, 4, 4), 2, 0)
    assert m.shape == (8, 8, 8) and not m.any()


def test_mask_wrapped_window_1d_analogue():
    # rolled axis 0 of length 4 by -1: windows hold originals {1,2} and {3,0}
    m = shifted_attention_mask((4, 4, 4), 2, 1)
    slot_a, slot_b = 0, 4  # local (0,0,0) and (1,0,0)
    assert m[0, slot_a, slot_b] == 0.0  # window d-block 0: originals 1,2
    assert m[4, slot_a, slot_b] == MASK_VALUE  # window d-block 1: originals 3,0
    assert m[4, slot_b, slot_a] == MASK_VALUE


def _reference_mask(g, w, s):
    """Region-slice construction on the rolled grid (three slices per axis)."""
    img = np.zeros((g, g, g), dtype=int)
    cnt = 0
    sl = (slice(0, -w), slice(-w, -s), slice(-s, None))
    for a in sl:
        for b in sl:
            for c in sl:
                img[a, b, c] = cnt
                cnt += 1
    win = img.reshape(g // w, w, g // w, w, g // w, w).transpose(0, 2, 4, 1, 3, 5).reshape(-1, w**3)
    return np.where(win[:, :, None] == win[:, None, :], 0.0, MASK_VALUE)


@pytest.mark.parametrize("g,w,s", [(4, 2, 1), (8, 4, 2), (6, 3, 1), (8, 4, 1)])
def test_mask_matches_slice_construction(g, w, s):
    assert np.array_equal(shifted_attention_mask((g,) * 3, w, s), _reference_mask(g, w, s))


def test_mask_rejects_bad_shift():
    with pytest.raises(GeometryError):
        shifted_attention_mask((4, 4, 4), 2, 2)


def test_shifted_attention_equals_unwrapped_padded_windows():
    g, w, s, c, heads = 4, 2, 1, 4, 2
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, g, g, g, c))
    p = _attn_params(c, heads, w, 6)
    rolled = roll(Tensor(x), (-s,) * 3, (1, 2, 3))
    out = _call_attention(window_partition(rolled, w).data, p, heads, w, shifted_attention_mask((g,) * 3, w, s))
    got = roll(window_reverse(Tensor(out), w, (g,) * 3), (s,) * 3, (1, 2, 3)).data

    # oracle: pad front by w-s and back by s, attend inside aligned windows, ignore pad tokens
    lead = w - s
    padded = g + w
    want = np.zeros_like(x)
    nwin = padded // w
    for wd, wh, ww in itertools.product(range(nwin), repeat=3):
        slots = np.array(list(itertools.product(range(w), repeat=3)))
        orig = slots + np.array([wd, wh, ww]) * w - lead
        real = np.all((orig >= 0) & (orig < g), axis=1)
        if not real.any():
            continue
        tok = np.array([x[0, d, h, q] for d, h, q in orig[real]])
        res = _dense_msa(tok, slots[real], p, heads, w)
        for (d, h, q), r in zip(orig[real], res):
            want[0, d, h, q] = r
    assert np.max(np.abs(got - want)) < 1e-10


def test_swin_layouts():
    tiny = stage_layout(NetConfig.tiny("swin3d"))
    assert [(L["side"], L["window"], L["shift"], L["padded"]) for L in tiny] == [(16, 4, 2, 16), (8, 4, 2, 8)]
    full = stage_layout(NetConfig.full("swin3d"))
    assert [L["side"] for L in full] == [45, 23, 12, 6]
    assert all(L["shift"] == L["window"] // 2 for L in full)
    assert [L["padded"] for L in full] == [45, 25, 15, 10]


# ---------------------------------------------------------------- geometry errors


def test_geometry_errors_at_build():
    with pytest.raises(GeometryError):
        build(NetConfig(arch="sfcn", input_extent=4, channels=[2, 2, 2, 2]))
    with pytest.raises(GeometryError):
        build(NetConfig.tiny("swin3d", input_extent=30, patch=4))
    with pytest.raises(GeometryError):
        build(NetConfig.tiny("swin3d", window=3))
    with pytest.raises(GeometryError):
        build(NetConfig.tiny("densenet3d", input_extent=2))


def test_config_errors():
    with pytest.raises(ConfigError):
        NetConfig(arch="resnet")
    with pytest.raises(ConfigError):
        NetConfig.tiny("sfcn", task="height")
    with pytest.raises(ConfigError):
        build(NetConfig.tiny("swin3d", channels=[8, 12]))
    with pytest.raises(ConfigError):
        build(NetConfig.tiny("densenet3d", compression=1.5))


@pytest.mark.parametrize("arch", ARCHS)
def test_wrong_input_shape(arch):
    net = build(NetConfig.tiny(arch))
    with pytest.raises(DimensionError):
        net(_x(1, extent=16))


def test_load_state_checks_shapes():
    net = build(NetConfig.tiny("sfcn"))
    state = net.state_dict()
    state["stage1.conv.weight"] = np.zeros((1, 1, 1, 1, 1))
    with pytest.raises(DimensionError):
        net.load_state(state)
    state = net.state_dict()
    del state["head.bias"]
    with pytest.raises(DimensionError):
        net.load_state(state)


# ---------------------------------------------------------------- forward semantics


@pytest.mark.parametrize("arch", ARCHS)
def test_eval_determinism_and_batch_semantics(arch):
    net = build(NetConfig.tiny(arch, "age"))
    x = _x(3, seed=2)
    a, b = net(x).data, net(x).data
    assert np.array_equal(a, b)
    dup = net(Tensor(np.concatenate([x.data[:1], x.data[:1]]))).data
    assert np.array_equal(dup[0], dup[1])
    perm = [2, 0, 1]
    permuted = net(Tensor(x.data[perm])).data
    assert np.allclose(permuted, a[perm], rtol=0, atol=1e-6)


def test_train_mode_randomness_is_dropout_only():
    net = build(NetConfig.tiny("sfcn"))
    x = _x(4, seed=3)
    a = net(x, training=True, rng=np.random.default_rng(1)).data
    b = net(x, training=True, rng=np.random.default_rng(1)).data
    c = net(x, training=True, rng=np.random.default_rng(2)).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    quiet = build(NetConfig.tiny("sfcn", dropout_p=0.0))
    d = quiet(x, training=True, rng=np.random.default_rng(1)).data
    e = quiet(x, training=True, rng=np.random.default_rng(9)).data
    assert np.array_equal(d, e)


def test_init_is_seeded():
    a = build(NetConfig.tiny("swin3d")).state_dict()
    b = build(NetConfig.tiny("swin3d")).state_dict()
    c = build(NetConfig.tiny("swin3d", init_seed=1)).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


# ---------------------------------------------------------------- gradients


# piecewise-linear conv nets need a step small enough to stay between ReLU and
# max-pool kinks; the smooth Swin path prefers a larger step to beat roundoff
@pytest.mark.parametrize("arch,h", [("sfcn", 1e-6), ("densenet3d", 1e-6), ("swin3d", 1e-4)])
def test_full_network_gradient(arch, h):
    net = build(NetConfig.tiny(arch, "sex")).to(np.float64)
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 1, 32, 32, 32)))
    w = Tensor(rng.standard_normal((2, 1)))

    def loss():
        return (net(x, training=True, rng=np.random.default_rng(7)) * w).sum()

    worst, report = check_parameters(loss, net.params, 200, np.random.default_rng(3), h=h, atol=1e-10)
    assert len(report) >= 200
    assert worst < 1e-4, sorted(report, key=lambda r: -r[2])[:3]
