"""NIfTI codec, preprocessing, phantoms and cohort manifests."""

import gzip

import numpy as np
import pytest
from scipy.stats import binom

from voxdemog.errors import DegenerateInputError, DimensionError, FormatError, NumericError, UnsupportedError
from voxdemog.volume import (
    LABELS,
    PhantomSpec,
    Volume,
    center_crop,
    generate_phantom,
    handcrafted_features,
    make_cohort,
    phantom_labels,
    read_manifest,
    read_nifti,
    write_nifti,
    znormalize,
)
from voxdemog.volume.nifti import HEADER_DTYPE, HEADER_SIZE, VOX_OFFSET, build_header
from voxdemog.volume.preprocess import crop_window


def _rand_volume(shape=(7, 5, 6), seed=0, spacing=(1.0, 1.25, 2.5)):
    return Volume(np.random.default_rng(seed).standard_normal(shape).astype(np.float32), spacing)


# ---------------------------------------------------------------- NIfTI


def test_roundtrip_bitwise(tmp_path):
    v = _rand_volume()
    write_nifti(v, tmp_path / "a.nii")
    back = read_nifti(tmp_path / "a.nii")
    assert back.data.tobytes() == v.data.tobytes()
    assert back.dims == v.dims
    assert back.spacing == tuple(np.float32(s) for s in v.spacing)
    assert np.allclose(back.affine, v.affine)


def test_header_layout(tmp_path):
    v = _rand_volume()
    write_nifti(v, tmp_path / "a.nii")
    raw = (tmp_path / "a.nii").read_bytes()
    assert HEADER_SIZE == 348 and VOX_OFFSET == 348 + 4
    assert len(raw) == VOX_OFFSET + v.data.size * 4
    assert raw[344:348] == b"n+1\x00"
    assert int.from_bytes(raw[:4], "little") == 348


def test_affine_with_rotation_roundtrip(tmp_path):
    theta = 0.3
    rot = np.array([[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1]])
    aff = np.eye(4)
    aff[:3, :3] = rot * np.array([1.0, 1.25, 2.5])
    aff[:3, 3] = [-10.0, 4.0, 7.5]
    v = Volume(_rand_volume().data, (1.0, 1.25, 2.5), aff)
    write_nifti(v, tmp_path / "r.nii")
    assert np.allclose(read_nifti(tmp_path / "r.nii").affine, aff, atol=1e-5)


def _swap_file(native: bytes) -> bytes:
    hdr = np.frombuffer(native[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder("<"))[0]
    big = np.array(hdr, dtype=HEADER_DTYPE.newbyteorder(">"))
    n = (len(native) - VOX_OFFSET) // 4
    payload = np.frombuffer(native, dtype="<f4", count=n, offset=VOX_OFFSET).astype(">f4")
    return big.tobytes() + native[HEADER_SIZE:VOX_OFFSET] + payload.tobytes()


def test_big_endian_decodes_identically(tmp_path):
    v = _rand_volume(seed=3)
    write_nifti(v, tmp_path / "le.nii")
    swapped = _swap_file((tmp_path / "le.nii").read_bytes())
    # dim[0] = 3 reads as 768 under the wrong byte order
    assert int.from_bytes(swapped[40:42], "little") == 768
    (tmp_path / "be.nii").write_bytes(swapped)
    a, b = read_nifti(tmp_path / "le.nii"), read_nifti(tmp_path / "be.nii")
    assert a.data.tobytes() == b.data.tobytes()
    assert a.spacing == b.spacing and np.array_equal(a.affine, b.affine)


def _int16_file(path, stored, slope, inter):
    hdr = build_header(Volume(np.zeros(stored.shape, np.float32)))
    hdr["datatype"], hdr["bitpix"] = 4, 16
    hdr["scl_slope"], hdr["scl_inter"] = slope, inter
    path.write_bytes(hdr.tobytes() + b"\x00" * 4 + stored.astype("<i2").tobytes(order="F"))


def test_int16_scaling(tmp_path):
    stored = np.full((2, 2, 2), 3, dtype=np.int16)
    stored[1, 0, 1] = -4
    _int16_file(tmp_path / "s.nii", stored, 2.0, 1.0)
    data = read_nifti(tmp_path / "s.nii").data
    assert data[0, 0, 0] == 7.0 and data[1, 0, 1] == -7.0
    _int16_file(tmp_path / "u.nii", stored, 0.0, 5.0)  # slope 0 means unscaled
    assert read_nifti(tmp_path / "u.nii").data[0, 0, 0] == 3.0


def test_gzip_behind_switch(tmp_path):
    v = _rand_volume()
    with pytest.raises(UnsupportedError):
        write_nifti(v, tmp_path / "a.nii.gz")
    write_nifti(v, tmp_path / "a.nii.gz", allow_gzip=True)
    with gzip.open(tmp_path / "a.nii.gz", "rb") as fh:
        assert fh.read(4) == (348).to_bytes(4, "little")
    with pytest.raises(UnsupportedError):
        read_nifti(tmp_path / "a.nii.gz")
    assert read_nifti(tmp_path / "a.nii.gz", allow_gzip=True).data.tobytes() == v.data.tobytes()


def test_format_errors(tmp_path):
    v = _rand_volume()
    write_nifti(v, tmp_path / "a.nii")
    raw = bytearray((tmp_path / "a.nii").read_bytes())

    bad = bytearray(raw)
    bad[344:348] = b"ni1\x00"
    (tmp_path / "magic.nii").write_bytes(bytes(bad))
    with pytest.raises(FormatError):
        read_nifti(tmp_path / "magic.nii")

    bad = bytearray(raw)
    bad[70:72] = (128).to_bytes(2, "little")  # RGB24
    (tmp_path / "dtype.nii").write_bytes(bytes(bad))
    with pytest.raises(UnsupportedError):
        read_nifti(tmp_path / "dtype.nii")

    (tmp_path / "trunc.nii").write_bytes(bytes(raw[:-10]))
    with pytest.raises(OSError):
        read_nifti(tmp_path / "trunc.nii")

    (tmp_path / "short.nii").write_bytes(bytes(raw[:100]))
    with pytest.raises(OSError):
        read_nifti(tmp_path / "short.nii")

    with pytest.raises(OSError):
        read_nifti(tmp_path / "missing.nii")


def test_zero_size_rejected():
    with pytest.raises(DimensionError):
        Volume(np.zeros((0, 3, 3)))


# ---------------------------------------------------------------- preprocessing


def test_znormalize_examples():
    v = Volume(np.array([0, 2, 0, 2], np.float32).reshape(1, 2, 2))
    assert np.array_equal(znormalize(v).data.ravel(), [-1, 1, -1, 1])
    with pytest.raises(DegenerateInputError):
        znormalize(Volume(np.full((3, 3, 3), 5.0)))
    bad = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    bad[1, 1, 1] = np.nan
    with pytest.raises(NumericError):
        znormalize(Volume(bad))


def test_znormalize_random_and_idempotent():
    v = Volume(np.random.default_rng(1).normal(3.0, 7.0, (16, 16, 16)))
    z = znormalize(v).data.astype(np.float64)
    assert abs(z.mean()) < 1e-5 and abs(z.std() - 1) < 1e-5
    zz = znormalize(znormalize(v)).data
    assert np.max(np.abs(zz - z)) < 1e-4


def test_crop_window_arithmetic():
    assert crop_window(4, 2) == (1, 0, 0)
    assert crop_window(182, 180) == (1, 0, 0)
    assert crop_window(218, 180) == (19, 0, 0)
    assert crop_window(3, 5) == (0, 1, 1)


def test_center_crop_indices():
    data = np.arange(218, dtype=np.float32)[None, :, None] * np.ones((182, 1, 4), np.float32)
    data[:, :, 0] = np.arange(182)[:, None]
    out = center_crop(Volume(data), (180, 180, 4)).data
    assert out[:, 0, 0].tolist() == list(range(1, 181))
    assert out[0, :, 1].tolist() == list(range(19, 199))
    padded = center_crop(Volume(np.ones((3, 3, 3))), 5).data
    assert padded.shape == (5, 5, 5)
    assert padded[0].sum() == 0 and padded[4].sum() == 0 and padded[1:4, 1:4, 1:4].min() == 1


def test_center_crop_idempotent_and_keeps_world_coordinates():
    v = _rand_volume((9, 8, 7))
    once = center_crop(v, (5, 6, 7))
    twice = center_crop(once, (5, 6, 7))
    assert np.array_equal(once.data, twice.data) and np.array_equal(once.affine, twice.affine)
    # voxel (0,0,0) of the crop is voxel (2,1,0) of the source
    assert np.allclose(once.affine @ [0, 0, 0, 1], v.affine @ [2, 1, 0, 1])


# ---------------------------------------------------------------- phantoms


def test_phantom_deterministic():
    spec = PhantomSpec()
    a = generate_phantom(spec, 1, 55.0, 9).data
    b = generate_phantom(spec, 1, 55.0, 9).data
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != generate_phantom(spec, 1, 55.0, 10).data.tobytes()


def test_zero_dimorphism_removes_sex():
    spec = PhantomSpec(dimorphism=0.0)
    assert np.array_equal(generate_phantom(spec, 0, 50.0, 3).data, generate_phantom(spec, 1, 50.0, 3).data)


def test_ventricles_grow_with_age():
    spec = PhantomSpec(noise_sigma=0.0)
    counts = [int((phantom_labels(spec, 0, a, 5) == LABELS["ventricle"]).sum()) for a in (40.0, 55.0, 70.0)]
    assert counts[0] < counts[1] < counts[2]


def test_left_nucleus_carries_sex():
    spec = PhantomSpec(noise_sigma=0.0)
    f = (phantom_labels(spec, 0, 50.0, 1) == LABELS["left_nucleus"]).sum()
    m = (phantom_labels(spec, 1, 50.0, 1) == LABELS["left_nucleus"]).sum()
    r = (phantom_labels(spec, 0, 50.0, 1) == LABELS["right_nucleus"]).sum()
    assert f < r < m
    # left is the low index half
    assert np.argwhere(phantom_labels(spec, 1, 50.0, 1) == LABELS["left_nucleus"])[:, 0].max() < spec.extent // 2


def _probe_cohort(spec, n, seed):
    rng = np.random.default_rng(seed)
    sex = rng.integers(0, 2, n)
    age = rng.uniform(40, 70, n)
    feats = np.array([handcrafted_features(generate_phantom(spec, int(s), float(a), 1000 * seed + i))
                      for i, (s, a) in enumerate(zip(sex, age))])
    return np.column_stack([feats, np.ones(n)]), sex, age


def _probe(spec, target):
    xtr, str_, atr = _probe_cohort(spec, 60, 1)
    xte, ste, ate = _probe_cohort(spec, 60, 2)
    ytr, yte = (str_, ste) if target == "sex" else (atr, ate)
    coef = np.linalg.lstsq(xtr, ytr, rcond=None)[0]
    pred = xte @ coef
    if target == "sex":
        return float(np.mean((pred > 0.5) == yte))
    return 1.0 - float(np.sum((pred - yte) ** 2) / np.sum((yte - yte.mean()) ** 2))


def test_signal_strength_monotone_in_effect_size():
    sex_acc = [_probe(PhantomSpec(dimorphism=d), "sex") for d in (0.0, 0.05, 0.3)]
    assert sex_acc[0] < sex_acc[1] <= sex_acc[2]
    assert sex_acc[0] < 0.75 and sex_acc[2] > 0.95
    age_r2 = [_probe(PhantomSpec(atrophy_rate=0.0, ventricle_growth=g), "age") for g in (0.0, 0.005, 0.025)]
    assert age_r2[0] < age_r2[1] < age_r2[2]
    assert age_r2[0] < 0.2 and age_r2[2] > 0.8


# ---------------------------------------------------------------- cohorts


def test_cohort_manifest(tmp_path):
    m = make_cohort(PhantomSpec(extent=16), 100, tmp_path / "a", sex_ratio=0.522, seed=4)
    assert len(m) == 100 and len(set(m.ids)) == 100
    males = sum(r.sex for r in m.rows)
    lo, hi = binom.interval(0.99, 100, 0.522)
    assert lo <= males <= hi
    back = read_manifest(tmp_path / "a" / "manifest.csv")
    assert back.rows == m.rows
    back.check_age_range(40, 70)
    assert (tmp_path / "a" / "regions.csv").exists() and (tmp_path / "a" / "region_map.csv").exists()


def test_cohort_rerun_identical_bytes(tmp_path):
    spec = PhantomSpec(extent=16)
    make_cohort(spec, 12, tmp_path / "a", seed=3)
    make_cohort(spec, 12, tmp_path / "b", seed=3)
    for name in ("manifest.csv", "regions.csv", "volumes/phantom-0005.nii"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("subject_id,path,sex,age\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_manifest(p)
    p.write_text("subject_id,path,sex,age,cohort\na,x.nii,0,50,c\na,y.nii,1,51,c\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_manifest(p)
    p.write_text("subject_id,path,sex,age,cohort\na,x.nii,2,50,c\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_manifest(p)
    p.write_text("subject_id,path,sex,age,cohort\na,x.nii,1,old,c\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_manifest(p)
