"""Volumetric data model and NIfTI-1 reading/writing.

Arrays are indexed ``data[i, j, k]`` with ``i`` along x.  On disk (and in
:meth:`Volume3.flat`) voxels are traversed x fastest, then y, then z, so
voxel ``(i, j, k)`` sits at flat offset ``i + nx * (j + ny * k)``.

Scalar volumes are held as float32, label volumes as uint16 and coordinate
volumes as float32 with a trailing channel axis of length 3.
"""
from __future__ import annotations

import gzip
import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, GeometryError, UnsupportedTypeError

DEFAULT_LABEL_COUNT = 44

# NIfTI-1 datatype codes
DT_UINT8 = 2
DT_INT16 = 4
DT_INT32 = 8
DT_FLOAT32 = 16
DT_UINT16 = 512

_DTYPES = {
    DT_UINT8: np.dtype("u1"),
    DT_INT16: np.dtype("i2"),
    DT_INT32: np.dtype("i4"),
    DT_FLOAT32: np.dtype("f4"),
    DT_UINT16: np.dtype("u2"),
}
_INTEGER_CODES = {DT_UINT8, DT_INT16, DT_INT32, DT_UINT16}

INTENT_NONE = 0
INTENT_LABEL = 1002
INTENT_VECTOR = 1007

HEADER_SIZE = 348
VOX_OFFSET = 352
# largest magnitude below which every integer is exact in float32
_F32_EXACT_INT = 2**24

# offsets into the 348-byte header
_OFF = {
    "sizeof_hdr": 0,
    "dim_info": 39,
    "dim": 40,
    "intent_p1": 56,
    "intent_code": 68,
    "datatype": 70,
    "bitpix": 72,
    "pixdim": 76,
    "vox_offset": 108,
    "scl_slope": 112,
    "scl_inter": 116,
    "xyzt_units": 123,
    "descrip": 148,
    "qform_code": 252,
    "sform_code": 254,
    "quatern": 256,
    "srow": 280,
    "magic": 344,
}


def _check_geometry(dims, voxel_size, affine):
    if len(dims) != 3 or any(int(n) < 1 for n in dims):
        raise GeometryError(f"dims must be three positive integers, got {dims}")
    if len(voxel_size) != 3 or not all(np.isfinite(voxel_size)) or any(v <= 0 for v in voxel_size):
        raise GeometryError(f"voxel sizes must be positive, got {voxel_size}")
    if affine.shape != (4, 4) or not np.all(np.isfinite(affine)):
        raise GeometryError("affine must be a finite 4x4 matrix")
    if abs(np.linalg.det(affine[:3, :3])) == 0.0:
        raise GeometryError("affine upper-left 3x3 is singular")


def _first_bad(data: np.ndarray) -> tuple[int, ...]:
    idx = np.argwhere(~np.isfinite(data))[0]
    return tuple(int(v) for v in idx)


def default_affine(voxel_size) -> np.ndarray:
    return np.diag([*map(float, voxel_size), 1.0])


@dataclass(frozen=True, eq=False)
class _Geometry:
    data: np.ndarray
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default=None)

    def _init_geometry(self):
        vs = tuple(float(np.float32(v)) for v in self.voxel_size)
        object.__setattr__(self, "voxel_size", vs)
        aff = default_affine(vs) if self.affine is None else np.asarray(self.affine, dtype=np.float64)
        # the header stores the affine as float32; normalise so round trips are exact
        aff = aff.astype(np.float32).astype(np.float64)
        aff[3] = (0.0, 0.0, 0.0, 1.0)
        aff.setflags(write=False)
        object.__setattr__(self, "affine", aff)
        _check_geometry(self.data.shape[:3], vs, aff)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape[:3])

    @property
    def nvox(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def same_geometry(self, other: "_Geometry") -> bool:
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and np.array_equal(self.affine, other.affine)
        )

    def geometry_str(self) -> str:
        return f"dims={self.dims} voxel_size={self.voxel_size} affine={self.affine.tolist()}"

    def flat(self) -> np.ndarray:
        """Voxel values in on-disk traversal order (x fastest)."""
        return self.data.ravel(order="F")

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return (
            self.same_geometry(other)
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
            and getattr(self, "label_count", None) == getattr(other, "label_count", None)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Volume3(_Geometry):
    """A scalar grid with voxel geometry."""

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise GeometryError(f"Volume3 needs a 3D array, got shape {data.shape}")
        if data.dtype != np.float32:
            if data.dtype.kind in "iu" and data.size and np.abs(data.astype(np.int64)).max() > _F32_EXACT_INT:
                raise DataError("integer values beyond 2**24 cannot be held exactly as float32")
            data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise DataError(f"non-finite value at voxel {_first_bad(data)}", _first_bad(data))
        data = np.array(data, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        self._init_geometry()

    def like(self, data) -> "Volume3":
        """A new volume with this geometry and different data."""
        return Volume3(data, self.voxel_size, self.affine)


@dataclass(frozen=True, eq=False)
class LabelVolume(_Geometry):
    label_count: int = DEFAULT_LABEL_COUNT

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise GeometryError(f"LabelVolume needs a 3D array, got shape {data.shape}")
        if data.dtype.kind not in "iub":
            if not np.all(np.isfinite(data)) or not np.array_equal(data, np.round(data)):
                raise DataError("label volume values must be integers")
        if data.size and (data.min() < 0):
            raise DataError(f"negative label at voxel {tuple(map(int, np.argwhere(data < 0)[0]))}")
        if int(self.label_count) < 1 or int(self.label_count) > 65536:
            raise DataError(f"label_count out of range: {self.label_count}")
        if data.size and data.max() >= self.label_count:
            bad = tuple(map(int, np.argwhere(data >= self.label_count)[0]))
            raise DataError(f"label {int(data[bad])} at voxel {bad} >= label_count {self.label_count}", bad)
        data = data.astype(np.uint16)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "label_count", int(self.label_count))
        self._init_geometry()


@dataclass(frozen=True, eq=False)
class CoordVolume(_Geometry):
    """Per-voxel 3-vector of atlas coordinates in mm, shape (nx, ny, nz, 3)."""

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[3] != 3:
            raise GeometryError(f"CoordVolume needs shape (nx, ny, nz, 3), got {data.shape}")
        data = np.array(data, dtype=np.float32, copy=True)
        if not np.all(np.isfinite(data)):
            raise DataError(f"non-finite coordinate at {_first_bad(data)}", _first_bad(data)[:3])
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        self._init_geometry()


@dataclass(frozen=True)
class NMRVolumeSet:
    """Co-registered proton density, T1 (ms) and T2 (ms) maps."""

    rho: Volume3
    t1: Volume3
    t2: Volume3

    def __post_init__(self):
        for name in ("t1", "t2"):
            other = getattr(self, name)
            if not self.rho.same_geometry(other):
                raise GeometryError(
                    f"geometry mismatch: rho {self.rho.geometry_str()} vs {name} {other.geometry_str()}"
                )

    @property
    def dims(self):
        return self.rho.dims

    def support(self) -> np.ndarray:
        """Voxels where all three maps are strictly positive."""
        return (self.rho.data > 0) & (self.t1.data > 0) & (self.t2.data > 0)

    def validate(self, mask: np.ndarray | None = None) -> None:
        """Check positivity of every channel inside ``mask`` (default: rho > 0)."""
        fg = self.rho.data > 0 if mask is None else np.asarray(mask, dtype=bool)
        for name in ("rho", "t1", "t2"):
            bad = fg & ~(getattr(self, name).data > 0)
            if bad.any():
                idx = tuple(int(v) for v in np.argwhere(bad)[0])
                raise DataError(f"nonpositive {name} at foreground voxel {idx}", idx)


# ---------------------------------------------------------------------------
# NIfTI-1


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}", field="path") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})", field="gzip") from exc
    return raw


def _qform_affine(hdr: bytes, e: str, pixdim) -> np.ndarray:
    b, c, d, qx, qy, qz = struct.unpack_from(e + "6f", hdr, _OFF["quatern"])
    a = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a) if a > 1e-7 else 0.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    scale = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    aff = np.eye(4)
    aff[:3, :3] = rot * scale
    aff[:3, 3] = (qx, qy, qz)
    return aff


def _parse(raw: bytes, path: Path):
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the 348-byte header", field="sizeof_hdr")
    for e in "<>":
        if struct.unpack_from(e + "i", raw, 0)[0] == HEADER_SIZE:
            break
    else:
        raise FormatError(f"{path}: sizeof_hdr is not 348", field="sizeof_hdr")
    magic = raw[_OFF["magic"] : _OFF["magic"] + 4]
    if magic != b"n+1\x00":
        raise FormatError(f"{path}: bad magic {magic!r} (only single-file n+1 is supported)", field="magic")
    dim = struct.unpack_from(e + "8h", raw, _OFF["dim"])
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"{path}: dim[0]={ndim} out of range", field="dim")
    shape = [int(n) for n in dim[1 : ndim + 1]]
    if any(n < 1 for n in shape):
        raise FormatError(f"{path}: nonpositive dimension in {shape}", field="dim")
    shape = (shape + [1, 1, 1])[: max(3, ndim)]
    intent_p1 = struct.unpack_from(e + "f", raw, _OFF["intent_p1"])[0]
    intent_code, datatype, bitpix = struct.unpack_from(e + "3h", raw, _OFF["intent_code"])
    if datatype not in _DTYPES:
        raise UnsupportedTypeError(f"{path}: unsupported datatype code {datatype}", field="datatype")
    dtype = _DTYPES[datatype].newbyteorder(e)
    if bitpix != dtype.itemsize * 8:
        raise FormatError(f"{path}: bitpix {bitpix} does not match datatype {datatype}", field="bitpix")
    pixdim = struct.unpack_from(e + "8f", raw, _OFF["pixdim"])
    vox_offset = struct.unpack_from(e + "f", raw, _OFF["vox_offset"])[0]
    if not np.isfinite(vox_offset) or vox_offset < VOX_OFFSET or vox_offset != int(vox_offset):
        raise FormatError(f"{path}: invalid vox_offset {vox_offset}", field="vox_offset")
    slope, inter = struct.unpack_from(e + "2f", raw, _OFF["scl_slope"])
    qform_code, sform_code = struct.unpack_from(e + "2h", raw, _OFF["qform_code"])
    voxel_size = tuple(abs(float(p)) for p in pixdim[1:4])
    if any(not np.isfinite(v) or v <= 0 for v in voxel_size):
        raise FormatError(f"{path}: nonpositive pixdim {voxel_size}", field="pixdim")
    if sform_code > 0:
        srow = struct.unpack_from(e + "12f", raw, _OFF["srow"])
        affine = np.vstack([np.reshape(srow, (3, 4)), [0, 0, 0, 1]]).astype(np.float64)
    elif qform_code > 0:
        affine = _qform_affine(raw, e, pixdim)
    else:
        affine = default_affine(voxel_size)

    count = int(np.prod(shape))
    start = int(vox_offset)
    nbytes = count * dtype.itemsize
    if len(raw) < start + nbytes:
        raise FormatError(
            f"{path}: data truncated ({len(raw) - start} of {nbytes} bytes)", field="vox_offset"
        )
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
    data = flat.reshape(shape, order="F")
    return dict(
        data=data,
        datatype=datatype,
        intent_code=intent_code,
        intent_p1=intent_p1,
        slope=slope,
        inter=inter,
        voxel_size=voxel_size,
        affine=affine,
    )


def _scaled(h) -> np.ndarray:
    data, slope, inter = h["data"], h["slope"], h["inter"]
    if slope != 0 and np.isfinite(slope) and (slope != 1 or inter != 0):
        return data.astype(np.float64) * float(slope) + float(inter)
    return data


def read_volume(path) -> Volume3 | LabelVolume | CoordVolume:
    """Load a NIfTI-1 file (``.nii`` or gzip-compressed).

    Integer files with label intent load as :class:`LabelVolume`, vector
    intent files with three components as :class:`CoordVolume`, and all
    others as :class:`Volume3` with ``scl_slope``/``scl_inter`` applied.
    """
    path = Path(path)
    h = _parse(_read_bytes(path), path)
    data = h["data"]
    if data.ndim > 3:
        extra = data.shape[3:]
        if h["intent_code"] == INTENT_VECTOR and int(np.prod(extra)) == 3:
            vec = np.asarray(_scaled(h), dtype=np.float64).reshape(data.shape[:3] + (3,), order="F")
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{path}: non-finite coordinate at {_first_bad(vec)}", _first_bad(vec)[:3])
            return CoordVolume(vec, h["voxel_size"], h["affine"])
        raise FormatError(f"{path}: unsupported extra dimensions {extra}", field="dim")

    if h["intent_code"] == INTENT_LABEL and h["datatype"] in _INTEGER_CODES:
        count = int(h["intent_p1"]) if h["intent_p1"] >= 1 else max(DEFAULT_LABEL_COUNT, int(data.max()) + 1)
        return LabelVolume(np.asarray(data), h["voxel_size"], h["affine"], label_count=count)

    values = _scaled(h)
    if not np.all(np.isfinite(values)):
        idx = _first_bad(values)
        raise DataError(f"{path}: non-finite value at voxel {idx}", idx)
    return Volume3(values, h["voxel_size"], h["affine"])


def read_labels(path, label_count: int | None = None) -> LabelVolume:
    """Load any integer-valued NIfTI file as a label volume."""
    vol = read_volume(path)
    if isinstance(vol, LabelVolume):
        if label_count is not None and label_count != vol.label_count:
            return LabelVolume(vol.data, vol.voxel_size, vol.affine, label_count)
        return vol
    if isinstance(vol, CoordVolume):
        raise FormatError(f"{path}: coordinate volume is not a label map", field="intent_code")
    data = vol.data
    if not np.array_equal(data, np.round(data)):
        raise DataError(f"{path}: non-integer values in label map")
    count = label_count or max(DEFAULT_LABEL_COUNT, int(data.max()) + 1 if data.size else 1)
    return LabelVolume(data.astype(np.int64), vol.voxel_size, vol.affine, count)


def _header(vol, datatype: int, shape, intent_code: int, intent_p1: float) -> bytes:
    hdr = bytearray(VOX_OFFSET)
    dtype = _DTYPES[datatype]
    struct.pack_into("<i", hdr, _OFF["sizeof_hdr"], HEADER_SIZE)
    dim = [len(shape), *shape] + [1] * (7 - len(shape))
    struct.pack_into("<8h", hdr, _OFF["dim"], *dim)
    struct.pack_into("<f", hdr, _OFF["intent_p1"], intent_p1)
    struct.pack_into("<3h", hdr, _OFF["intent_code"], intent_code, datatype, dtype.itemsize * 8)
    pixdim = [1.0, *vol.voxel_size] + [1.0] * 4
    struct.pack_into("<8f", hdr, _OFF["pixdim"], *pixdim)
    struct.pack_into("<f", hdr, _OFF["vox_offset"], float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, _OFF["scl_slope"], 1.0, 0.0)
    hdr[_OFF["xyzt_units"]] = 2  # mm
    struct.pack_into("<2h", hdr, _OFF["qform_code"], 0, 2)
    struct.pack_into("<12f", hdr, _OFF["srow"], *vol.affine[:3].ravel())
    hdr[_OFF["magic"] : _OFF["magic"] + 4] = b"n+1\x00"
    return bytes(hdr)


def encode_volume(vol: Volume3 | LabelVolume | CoordVolume) -> bytes:
    """Uncompressed NIfTI-1 bytes for ``vol``."""
    if isinstance(vol, LabelVolume):
        datatype, intent, p1 = DT_UINT16, INTENT_LABEL, float(vol.label_count)
        shape = list(vol.dims)
        payload = vol.data.astype("<u2").ravel(order="F")
    elif isinstance(vol, CoordVolume):
        datatype, intent, p1 = DT_FLOAT32, INTENT_VECTOR, 0.0
        shape = [*vol.dims, 1, 3]
        payload = vol.data.astype("<f4").ravel(order="F")
    elif isinstance(vol, Volume3):
        datatype, intent, p1 = DT_FLOAT32, INTENT_NONE, 0.0
        shape = list(vol.dims)
        payload = vol.data.astype("<f4").ravel(order="F")
    else:
        raise TypeError(f"cannot encode {type(vol).__name__}")
    return _header(vol, datatype, shape, intent, p1) + payload.tobytes()


def write_volume(vol: Volume3 | LabelVolume | CoordVolume, path) -> None:
    """Write ``vol`` as NIfTI-1; a ``.gz`` suffix selects gzip compression."""
    path = Path(path)
    blob = encode_volume(vol)
    try:
        if path.suffix == ".gz":
            buf = io.BytesIO()
            # fixed mtime and no embedded name keep output byte-identical across runs
            with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0, compresslevel=6) as gz:
                gz.write(blob)
            blob = buf.getvalue()
        tmp = path.with_name(path.name + ".part")
        tmp.write_bytes(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def load_nmr_set(rho_path, t1_path, t2_path) -> NMRVolumeSet:
    vols = []
    for name, p in (("rho", rho_path), ("t1", t1_path), ("t2", t2_path)):
        v = read_volume(p)
        if not isinstance(v, Volume3):
            raise FormatError(f"{p}: {name} map must be a scalar volume", field="intent_code")
        vols.append(v)
    nmr = NMRVolumeSet(*vols)
    nmr.validate()
    return nmr
