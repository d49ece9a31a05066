"""Saliency maps, confident-case averaging, overlays and region correlations."""

import csv
import logging

import numpy as np
import pytest
from matplotlib import image as mpimg

from voxdemog.errors import ContractError, DimensionError, FormatError
from voxdemog.explain import (
    DEFAULT_THRESHOLD,
    LOBES,
    RegionInfo,
    RegionTable,
    SaliencyMap,
    average_maps,
    axial_mosaic,
    correlate_volumes,
    export_overlay,
    load_region_mapping,
    load_region_table,
    most_confident,
    region_correlations,
    saliency,
    saliency_batch,
    threshold_overlay,
    top_k_average,
    write_correlations,
)
from voxdemog.nets import NetConfig, Network, build
from voxdemog.stats import PredictionRecord
from voxdemog.volume import PhantomSpec, phantom_labels, read_nifti, region_volumes


class _MeanProbe(Network):
    """y = w * mean(x) + b; its input gradient is the constant w / n."""

    def __init__(self, extent=8, w=2.5):
        super().__init__(NetConfig(arch="sfcn", task="sex", input_extent=extent, channels=[1, 1]))
        self._add("head.weight", np.full((1, 1), w))
        self._add("head.bias", np.zeros(1))
        self.to(np.float64)

    def forward(self, x, training=False, rng=None):
        return self.head(x.mean(axis=(2, 3, 4)).reshape(x.shape[0], 1))


def _sfcn64(task="sex", seed=0):
    return build(NetConfig.tiny("sfcn", task, init_seed=seed)).to(np.float64)


def _vol(seed=0, extent=32):
    return np.random.default_rng(seed).standard_normal((extent,) * 3)


# ---------------------------------------------------------------- saliency


def test_linear_probe_saliency_is_normalized_abs_input():
    x = _vol(1, 8)
    s = saliency(_MeanProbe(), x)
    np.testing.assert_allclose(s.data, np.abs(x) / np.abs(x).max(), rtol=1e-12)
    assert s.data.max() == 1.0 and s.data.min() >= 0.0 and not s.degenerate


def test_zeroed_region_contributes_nothing():
    x = _vol(2, 8)
    x[:4] = 0.0
    s = saliency(_MeanProbe(), x)
    assert np.all(s.data[:4] == 0.0) and s.data[4:].max() == 1.0


def test_all_zero_attribution_is_degenerate():
    s = saliency(_MeanProbe(), np.zeros((8, 8, 8)))
    assert s.degenerate and not s.data.any()


def test_saliency_matches_finite_difference_input_gradient():
    net, x = _sfcn64(), _vol(3)
    s = saliency(net, x)

    def f(v):
        from voxdemog.tensor import Tensor

        return float(net(Tensor(v[None, None]), training=False).data.ravel()[0])

    rng = np.random.default_rng(4)
    h = 1e-6
    numeric = np.zeros_like(x)
    voxels = [tuple(rng.integers(0, 32, size=3)) for _ in range(20)]
    for v in voxels:
        xp, xm = x.copy(), x.copy()
        xp[v] += h
        xm[v] -= h
        numeric[v] = (f(xp) - f(xm)) / (2 * h)
    from voxdemog.explain import input_gradients

    _, grad = input_gradients(net, x)
    peak = np.abs(x * grad[0]).max()
    worst = 0.0
    for v in voxels:
        a, b = s.data[v], abs(x[v] * numeric[v]) / peak
        if max(a, b) > 0:
            worst = max(worst, abs(a - b) / max(a, b))
    assert worst < 1e-3


def test_saliency_shape_errors():
    with pytest.raises(DimensionError):
        saliency(_sfcn64(), _vol(0, 16))
    with pytest.raises(DimensionError):
        saliency(_sfcn64(), np.zeros((32, 32)))


def test_saliency_invariant_to_output_rescaling():
    x = _vol(5)
    net = _sfcn64()
    before = saliency(net, x).data
    net.params["head.weight"].data *= 3.0
    net.params["head.bias"].data *= 3.0
    np.testing.assert_allclose(saliency(net, x).data, before, atol=1e-6)


def test_batch_saliency_equals_single():
    net = _sfcn64("age", seed=1)
    vols = {f"s{i}": _vol(10 + i) for i in range(3)}
    batch = saliency_batch(net, vols, batch_size=2)
    for sid, v in vols.items():
        np.testing.assert_allclose(batch[sid].data, saliency(net, v).data, atol=1e-12)
        assert batch[sid].subject_ids == (sid,)


# ---------------------------------------------------------------- top-k


def _maps(ids, seed=0, shape=(6, 6, 6)):
    rng = np.random.default_rng(seed)
    out = {}
    for i in ids:
        d = rng.random(shape)
        out[i] = SaliencyMap(d / d.max(), (i,), "sex")
    return out


def test_top_k_identical_maps_and_k1_identity():
    base = _maps(["a"])["a"]
    same = [SaliencyMap(base.data.copy(), (f"s{i}",), "sex") for i in range(5)]
    np.testing.assert_allclose(average_maps(same).data, base.data, rtol=1e-12)
    recs = [PredictionRecord(f"s{i}", "c", sex_true=1, sex_score=0.5 + 0.1 * i) for i in range(5)]
    maps = _maps([r.subject_id for r in recs], seed=1)
    one = top_k_average(recs, maps, "sex", k=1)
    np.testing.assert_array_equal(one.data, maps["s4"].data)
    assert one.subject_ids == ("s4",)


def test_top_k_average_renormalizes_to_one():
    recs = [PredictionRecord(f"s{i}", "c", sex_true=i % 2, sex_score=i / 10) for i in range(10)]
    out = top_k_average(recs, _maps([r.subject_id for r in recs], seed=2), "sex")
    assert out.data.max() == 1.0 and len(out.subject_ids) == 5


@pytest.mark.parametrize("task", ("sex", "age"))
def test_confidence_ranking_matches_brute_force_sort(task):
    rng = np.random.default_rng(7)
    recs = []
    for i in range(50):
        if task == "sex":
            recs.append(PredictionRecord(f"s{i:02d}", "c", sex_true=int(rng.integers(2)), sex_score=float(rng.random())))
        else:
            recs.append(PredictionRecord(f"s{i:02d}", "c", sex_true=0, age_true=float(rng.uniform(40, 70)), age_pred_raw=float(rng.uniform(40, 70))))
    if task == "sex":
        key = np.array([abs(r.sex_score - 0.5) for r in recs])
        order = np.argsort(-key, kind="stable")
    else:
        key = np.array([abs(r.age_pred - r.age_true) for r in recs])
        order = np.argsort(key, kind="stable")
    assert most_confident(recs, task, k=5) == [recs[j].subject_id for j in order[:5]]


def test_top_k_with_too_few_subjects_uses_all(caplog):
    recs = [PredictionRecord(f"s{i}", "c", sex_true=1, sex_score=0.9) for i in range(3)]
    with caplog.at_level(logging.WARNING):
        out = top_k_average(recs, _maps([r.subject_id for r in recs]), "sex", k=5)
    assert len(out.subject_ids) == 3 and "using all" in caplog.text


def test_average_shape_mismatch():
    with pytest.raises(DimensionError):
        average_maps([SaliencyMap(np.ones((2, 2, 2))), SaliencyMap(np.ones((3, 3, 3)))])


# ---------------------------------------------------------------- thresholds and export


def test_threshold_endpoints_and_default():
    m = _maps(["a"], seed=3)["a"]
    np.testing.assert_array_equal(threshold_overlay(m, 0.0).data, m.data)
    top = threshold_overlay(m, 1.0).data
    assert np.count_nonzero(top) == np.count_nonzero(m.data == 1.0) and top.max() == 1.0
    assert 0.08 <= DEFAULT_THRESHOLD <= 0.25
    mid = threshold_overlay(m)
    assert mid.threshold == DEFAULT_THRESHOLD and np.all((mid.data == 0) | (mid.data >= 0.1))
    with pytest.raises(ContractError):
        threshold_overlay(m, 1.5)


def test_axial_mosaic_takes_every_tenth_slice():
    data = np.zeros((32, 32, 32))
    for k in range(32):
        data[:, :, k] = k
    mosaic = axial_mosaic(data)
    assert mosaic.shape == (64, 64)
    assert [mosaic[0, 0], mosaic[0, 32], mosaic[32, 0], mosaic[32, 32]] == [0, 10, 20, 30]


def test_export_overlay_writes_png_and_nifti(tmp_path):
    m = threshold_overlay(_maps(["a"], seed=4, shape=(20, 20, 20))["a"], 0.1)
    paths = export_overlay(m, tmp_path, "sex_top5")
    img = mpimg.imread(paths["png"])
    assert img.shape[:2] == (20, 40)  # slices 0 and 10 side by side
    back = read_nifti(paths["nifti"])
    np.testing.assert_array_equal(back.data, m.data.astype(np.float32))
    first = paths["png"].read_bytes()
    export_overlay(m, tmp_path, "sex_top5")
    assert paths["png"].read_bytes() == first


# ---------------------------------------------------------------- region mapping


def _write_mapping(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["idp_id", "region_name", "lobe"])
        w.writerows(rows)


def test_load_139_region_mapping(tmp_path):
    rows = [(f"idp{i:03d}", f"region {i}", LOBES[i % 9]) for i in range(139)]
    _write_mapping(tmp_path / "map.csv", rows)
    m = load_region_mapping(tmp_path / "map.csv")
    assert len(m) == 139 and {r.lobe for r in m} == set(LOBES) and len(LOBES) == 9


@pytest.mark.parametrize(
    "rows",
    [
        [("a", "x", "frontal"), ("b", "y", "midbrain")],
        [("a", "x", "frontal"), ("a", "y", "parietal")],
        [],
    ],
)
def test_bad_region_mapping_rejected(tmp_path, rows):
    _write_mapping(tmp_path / "map.csv", rows)
    with pytest.raises(FormatError):
        load_region_mapping(tmp_path / "map.csv")


def test_region_mapping_bad_header(tmp_path):
    (tmp_path / "map.csv").write_text("id,name,lobe\na,b,frontal\n")
    with pytest.raises(FormatError):
        load_region_mapping(tmp_path / "map.csv")


def test_region_table_from_csv(tmp_path):
    _write_mapping(tmp_path / "map.csv", [("v", "ventricle", "subcortical"), ("c", "cortex", "frontal")])
    (tmp_path / "vol.csv").write_text("subject_id,c,v\ns1,10,2\ns2,11,3\n")
    t = load_region_table(tmp_path / "vol.csv", tmp_path / "map.csv")
    assert t.subject_ids == ["s1", "s2"]
    np.testing.assert_array_equal(t.column("v"), [2, 3])
    (tmp_path / "vol.csv").write_text("subject_id,c,v\ns1,10,0\n")
    with pytest.raises(FormatError):
        load_region_table(tmp_path / "vol.csv", tmp_path / "map.csv")


# ---------------------------------------------------------------- correlations


def _table(n=100, seed=0):
    rng = np.random.default_rng(seed)
    regions = [RegionInfo("r0", "a", "temporal"), RegionInfo("r1", "b", "frontal"), RegionInfo("r2", "c", "subcortical")]
    ids = [f"s{i:03d}" for i in range(n)]
    return RegionTable(regions, ids, rng.uniform(100, 200, size=(n, 3)))


def test_score_equal_to_region_volume_gives_r_one():
    t = _table()
    col = t.column("r2")
    recs = [PredictionRecord(s, "c", sex_true=0, age_true=50.0 + i % 7, age_pred_raw=float(col[i])) for i, s in enumerate(t.subject_ids)]
    rows, report = region_correlations(t, recs, "age")
    by_id = {r.idp_id: r for r in rows}
    assert by_id["r2"].r_prediction == pytest.approx(1.0, abs=1e-12)
    assert [r.lobe for r in rows] == ["frontal", "temporal", "subcortical"]
    assert report == {"n_used": 100, "table_only": 0, "records_only": 0}
    assert all(-1 <= r.r_prediction <= 1 and -1 <= r.r_label <= 1 for r in rows)


def test_label_permutations_center_r_label_at_zero():
    t = _table(seed=1)
    rng = np.random.default_rng(2)
    sex = rng.integers(0, 2, size=100)
    score = rng.random(100)
    means = []
    for _ in range(100):
        perm = rng.permutation(sex)
        recs = [PredictionRecord(s, "c", sex_true=int(perm[i]), sex_score=float(score[i])) for i, s in enumerate(t.subject_ids)]
        rows, _ = region_correlations(t, recs, "sex")
        means.append([r.r_label for r in rows])
    assert np.all(np.abs(np.mean(means, axis=0)) < 0.05)


def test_swapping_prediction_and_label_swaps_outputs():
    rng = np.random.default_rng(3)
    v, p, lab = rng.random((40, 5)), rng.random(40), rng.integers(0, 2, 40).astype(float)
    rp, rl = correlate_volumes(v, p, lab)
    rp2, rl2 = correlate_volumes(v, lab, p)
    np.testing.assert_array_equal(rp, rl2)
    np.testing.assert_array_equal(rl, rp2)


def test_listwise_deletion_reports_counts():
    t = _table(n=10)
    recs = [PredictionRecord(s, "c", sex_true=i % 2, sex_score=i / 10) for i, s in enumerate(t.subject_ids[:8])]
    recs.append(PredictionRecord("extra", "c", sex_true=1, sex_score=0.3))
    rows, report = region_correlations(t, recs, "sex")
    assert report == {"n_used": 8, "table_only": 2, "records_only": 1} and rows[0].n == 8
    with pytest.raises(ContractError):
        region_correlations(t, recs[:2], "sex")


def test_ventricle_driven_predictions_single_out_ventricle(tmp_path):
    spec = PhantomSpec(extent=32, atrophy_rate=0.0)
    rng = np.random.default_rng(5)
    ids, vols, ages = [], [], []
    for i in range(60):
        age = float(rng.uniform(40, 70))
        rv = region_volumes(phantom_labels(spec, int(i % 2), age, seed=i))
        ids.append(f"s{i:02d}")
        vols.append([rv[k] for k in ("ventricle", "cortex_shell", "left_hemisphere", "right_hemisphere")])
        ages.append(age)
    vols = np.array(vols)
    regions = [
        RegionInfo("vent", "ventricle", "subcortical"),
        RegionInfo("ctx", "cortex shell", "frontal"),
        RegionInfo("lh", "left hemisphere", "temporal"),
        RegionInfo("rh", "right hemisphere", "parietal"),
    ]
    table = RegionTable(regions, ids, vols)
    v = vols[:, 0]
    pred = 40 + 30 * (v - v.min()) / (v.max() - v.min()) + rng.normal(0, 1, 60)
    recs = [PredictionRecord(s, "c", sex_true=0, age_true=ages[i], age_pred_raw=float(pred[i])) for i, s in enumerate(ids)]
    rows, _ = region_correlations(table, recs, "age")
    r = {c.idp_id: c.r_prediction for c in rows}
    assert r["vent"] > 0.9 and all(abs(r["vent"]) > abs(r[k]) for k in ("ctx", "lh", "rh"))
    write_correlations(rows, tmp_path / "corr.csv")
    lines = (tmp_path / "corr.csv").read_text().splitlines()
    assert lines[0] == "idp_id,region,lobe,r_prediction,r_label" and len(lines) == 5
