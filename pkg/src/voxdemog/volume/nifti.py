"""Single-file NIfTI-1 reader/writer.

Supports datatypes int16, float32 and float64, either byte order, and the
scl_slope/scl_inter intensity scaling. Written files are little-endian
float32 with a 348-byte header, four zero extension bytes and the payload
at offset 352.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from voxdemog.errors import DimensionError, FormatError, UnsupportedError

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "i4"),
        ("session_error", "i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "i2", (8,)),
        ("intent_p1", "f4"),
        ("intent_p2", "f4"),
        ("intent_p3", "f4"),
        ("intent_code", "i2"),
        ("datatype", "i2"),
        ("bitpix", "i2"),
        ("slice_start", "i2"),
        ("pixdim", "f4", (8,)),
        ("vox_offset", "f4"),
        ("scl_slope", "f4"),
        ("scl_inter", "f4"),
        ("slice_end", "i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "f4"),
        ("cal_min", "f4"),
        ("slice_duration", "f4"),
        ("toffset", "f4"),
        ("glmax", "i4"),
        ("glmin", "i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "i2"),
        ("sform_code", "i2"),
        ("quatern_b", "f4"),
        ("quatern_c", "f4"),
        ("quatern_d", "f4"),
        ("qoffset_x", "f4"),
        ("qoffset_y", "f4"),
        ("qoffset_z", "f4"),
        ("srow_x", "f4", (4,)),
        ("srow_y", "f4", (4,)),
        ("srow_z", "f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert HEADER_DTYPE.itemsize == HEADER_SIZE

DATATYPES = {4: np.dtype("i2"), 16: np.dtype("f4"), 64: np.dtype("f8")}


@dataclass
class Volume:
    """3D scalar field with voxel spacing (mm) and a voxel-to-world affine."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise DimensionError(f"volume must be 3-D with extents >= 1, got {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.affine is None:
            self.affine = np.diag(list(self.spacing) + [1.0])
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4) or not np.allclose(self.affine[3], [0, 0, 0, 1]):
            raise DimensionError("affine must be 4x4 with last row (0, 0, 0, 1)")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


def _open(path: Path, mode: str, allow_gzip: bool):
    if path.suffix == ".gz":
        if not allow_gzip:
            raise UnsupportedError(f"{path}: gzip input needs allow_gzip=True")
        return gzip.GzipFile(path, mode, mtime=0)
    return open(path, mode)


def _quaternion(affine: np.ndarray, spacing) -> tuple[np.ndarray, float]:
    """Quaternion (b, c, d) and qfac for the rotation part of ``affine``."""
    r = affine[:3, :3] / np.asarray(spacing)[None, :]
    qfac = 1.0
    if np.linalg.det(r) < 0:
        r[:, 2] = -r[:, 2]
        qfac = -1.0
    # nearest proper rotation
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    a = 1.0 + r[0, 0] + r[1, 1] + r[2, 2]
    if a > 0.5:
        a = 0.5 * np.sqrt(a)
        b = 0.25 * (r[2, 1] - r[1, 2]) / a
        c = 0.25 * (r[0, 2] - r[2, 0]) / a
        d = 0.25 * (r[1, 0] - r[0, 1]) / a
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        b = 0.5 * np.sqrt(1.0 + r[0, 0] - (r[1, 1] + r[2, 2]))
        a = 0.25 * (r[2, 1] - r[1, 2]) / b
        c = 0.25 * (r[0, 1] + r[1, 0]) / b
        d = 0.25 * (r[0, 2] + r[2, 0]) / b
    elif r[1, 1] > r[2, 2]:
        c = 0.5 * np.sqrt(1.0 + r[1, 1] - (r[0, 0] + r[2, 2]))
        a = 0.25 * (r[0, 2] - r[2, 0]) / c
        b = 0.25 * (r[0, 1] + r[1, 0]) / c
        d = 0.25 * (r[1, 2] + r[2, 1]) / c
    else:
        d = 0.5 * np.sqrt(1.0 + r[2, 2] - (r[0, 0] + r[1, 1]))
        a = 0.25 * (r[1, 0] - r[0, 1]) / d
        b = 0.25 * (r[0, 2] + r[2, 0]) / d
        c = 0.25 * (r[1, 2] + r[2, 1]) / d
    if a < 0:
        b, c, d = -b, -c, -d
    return np.array([b, c, d]), qfac


def _qform_affine(hdr) -> np.ndarray:
    b, c, d = float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    r = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    pix = hdr["pixdim"].astype(np.float64)
    qfac = -1.0 if pix[0] < 0 else 1.0
    zooms = np.array([pix[1], pix[2], pix[3] * qfac])
    out = np.eye(4)
    out[:3, :3] = r * zooms[None, :]
    out[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return out


def read_nifti(path, allow_gzip: bool = False) -> Volume:
    path = Path(path)
    try:
        with _open(path, "rb", allow_gzip) as fh:
            raw = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise OSError(f"{path}: truncated header ({len(raw)} bytes)")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder("<"))[0]
    if not 1 <= int(hdr["dim"][0]) <= 7:
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(">"))[0]
        if not 1 <= int(hdr["dim"][0]) <= 7:
            raise FormatError(f"{path}: dim[0] out of range in either byte order")
        order = ">"
    else:
        order = "<"
    if bytes(hdr["magic"]).ljust(4, b"\x00") != MAGIC:
        raise FormatError(f"{path}: bad magic {bytes(hdr['magic'])!r}, expected single-file NIfTI-1")
    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        raise FormatError(f"{path}: sizeof_hdr is {int(hdr['sizeof_hdr'])}")
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise UnsupportedError(f"{path}: unsupported NIfTI datatype code {code}")
    dtype = DATATYPES[code].newbyteorder(order)
    ndim = int(hdr["dim"][0])
    shape = [int(n) for n in hdr["dim"][1 : ndim + 1]]
    while len(shape) > 3 and shape[-1] == 1:
        shape.pop()
    if len(shape) > 3:
        raise UnsupportedError(f"{path}: {len(shape)}-D data is not a 3-D volume")
    shape += [1] * (3 - len(shape))
    if min(shape) < 1:
        raise FormatError(f"{path}: non-positive dimension {shape}")
    offset = int(hdr["vox_offset"])
    if offset < VOX_OFFSET:
        raise FormatError(f"{path}: vox_offset {offset} < {VOX_OFFSET}")
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise OSError(f"{path}: truncated payload ({len(raw) - offset} of {nbytes} bytes)")
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape, order="F")
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope != 0.0 and np.isfinite(slope) and not (slope == 1.0 and inter == 0.0):
        data = data.astype(np.float64) * slope + inter
    spacing = tuple(float(abs(s)) for s in hdr["pixdim"][1:4])
    if int(hdr["sform_code"]) > 0:
        affine = np.eye(4)
        affine[0], affine[1], affine[2] = hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]
    elif int(hdr["qform_code"]) > 0:
        affine = _qform_affine(hdr)
    else:
        affine = np.diag(list(spacing) + [1.0])
    return Volume(np.ascontiguousarray(data, dtype=np.float32), spacing, affine)


def build_header(v: Volume) -> np.ndarray:
    dims = v.dims
    if min(dims) < 1:
        raise DimensionError(f"cannot write zero-size volume {dims}")
    if max(dims) > 32767:
        raise DimensionError(f"dims {dims} do not fit int16 header fields")
    hdr = np.zeros((), dtype=HEADER_DTYPE.newbyteorder("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *dims, 1, 1, 1, 1]
    hdr["datatype"] = 16
    hdr["bitpix"] = 32
    quat, qfac = _quaternion(v.affine, v.spacing)
    hdr["pixdim"] = [qfac, *v.spacing, 1, 1, 1, 1]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["xyzt_units"] = 2  # mm
    hdr["qform_code"] = 1
    hdr["sform_code"] = 1
    hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"] = quat
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = v.affine[:3, 3]
    hdr["srow_x"], hdr["srow_y"], hdr["srow_z"] = v.affine[0], v.affine[1], v.affine[2]
    hdr["magic"] = MAGIC
    return hdr


def write_nifti(v: Volume, path, allow_gzip: bool = False) -> None:
    path = Path(path)
    hdr = build_header(v)
    payload = np.asarray(v.data, dtype="<f4").tobytes(order="F")
    blob = hdr.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload
    with _open(path, "wb", allow_gzip) as fh:
        fh.write(blob)
