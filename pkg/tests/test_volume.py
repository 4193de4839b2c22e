import gzip
import struct
import time

import numpy as np
import pytest

from seqforge.errors import DataError, FormatError, GeometryError, UnsupportedTypeError
from seqforge.volume import (
    CoordVolume,
    LabelVolume,
    NMRVolumeSet,
    Volume3,
    encode_volume,
    load_nmr_set,
    read_labels,
    read_volume,
    write_volume,
)


def raw_nifti(data, datatype, bitpix, slope=1.0, inter=0.0, dims=None, magic=b"n+1\x00", sizeof=348):
    """A minimal NIfTI-1 file built field by field, independent of the writer."""
    dims = dims or data.shape
    hdr = bytearray(352)
    struct.pack_into("<i", hdr, 0, sizeof)
    struct.pack_into("<8h", hdr, 40, len(dims), *dims, *([1] * (7 - len(dims))))
    struct.pack_into("<hh", hdr, 70, datatype, bitpix)
    struct.pack_into("<8f", hdr, 76, 1, 1, 1, 1, 1, 1, 1, 1)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<ff", hdr, 112, slope, inter)
    hdr[344:348] = magic
    return bytes(hdr) + data.ravel(order="F").tobytes()


def test_roundtrip_bit_exact(tmp_path, rng):
    data = rng.normal(size=(5, 4, 3)).astype(np.float32)
    aff = np.array([[0.9, 0.1, 0, -10], [0, 1.1, 0, 5.5], [0.05, 0, 1.5, 2], [0, 0, 0, 1]])
    vol = Volume3(data, (0.9, 1.1, 1.5), aff)
    for name in ("v.nii", "v.nii.gz"):
        write_volume(vol, tmp_path / name)
        back = read_volume(tmp_path / name)
        assert back == vol
        assert back.data.tobytes() == vol.data.tobytes()


def test_zeros_roundtrip(tmp_path):
    vol = Volume3(np.zeros((2, 2, 2), np.float32))
    write_volume(vol, tmp_path / "z.nii")
    back = read_volume(tmp_path / "z.nii")
    assert back.dims == (2, 2, 2)
    assert not back.data.any()


def test_scaling_applied(tmp_path):
    p = tmp_path / "s.nii"
    p.write_bytes(raw_nifti(np.full((2, 2, 2), 3, np.int16), 4, 16, slope=2.0, inter=1.0))
    assert np.all(read_volume(p).data == 7.0)


@pytest.mark.parametrize(
    "dtype,code,bits", [("u1", 2, 8), ("i2", 4, 16), ("u2", 512, 16), ("i4", 8, 32), ("f4", 16, 32)]
)
def test_supported_datatypes_lossless(tmp_path, dtype, code, bits):
    data = np.arange(24).reshape(2, 3, 4).astype(dtype)
    p = tmp_path / "d.nii"
    p.write_bytes(raw_nifti(data, code, bits))
    vol = read_volume(p)
    assert vol.data.dtype == np.float32
    assert np.array_equal(vol.data, data.astype(np.float64))


def test_unsupported_datatype(tmp_path):
    p = tmp_path / "d.nii"
    p.write_bytes(raw_nifti(np.zeros((2, 2, 2), np.float64), 64, 64))
    with pytest.raises(UnsupportedTypeError):
        read_volume(p)


@pytest.mark.parametrize(
    "kwargs,field",
    [
        (dict(magic=b"ni1\x00"), "magic"),
        (dict(sizeof=100), "sizeof_hdr"),
        (dict(dims=(2, 0, 2)), "dim"),
    ],
)
def test_malformed_header_names_field(tmp_path, kwargs, field):
    p = tmp_path / "bad.nii"
    p.write_bytes(raw_nifti(np.zeros((2, 2, 2), np.float32), 16, 32, **kwargs))
    with pytest.raises(FormatError) as exc:
        read_volume(p)
    assert exc.value.field == field


def test_bitpix_mismatch(tmp_path):
    p = tmp_path / "bad.nii"
    p.write_bytes(raw_nifti(np.zeros((2, 2, 2), np.float32), 16, 8))
    with pytest.raises(FormatError) as exc:
        read_volume(p)
    assert exc.value.field == "bitpix"


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.nii"
    p.write_bytes(raw_nifti(np.zeros((4, 4, 4), np.float32), 16, 32)[:-10])
    with pytest.raises(FormatError):
        read_volume(p)


def test_nonfinite_rejected_with_index(tmp_path):
    data = np.zeros((3, 3, 3), np.float32)
    data[1, 2, 0] = np.nan
    p = tmp_path / "n.nii"
    p.write_bytes(raw_nifti(data, 16, 32))
    with pytest.raises(DataError) as exc:
        read_volume(p)
    assert exc.value.index == (1, 2, 0)
    with pytest.raises(DataError):
        Volume3(data)


def test_gzip_detected_by_magic_not_suffix(tmp_path):
    vol = Volume3(np.arange(8, dtype=np.float32).reshape(2, 2, 2))
    p = tmp_path / "plain_name.nii"
    p.write_bytes(gzip.compress(encode_volume(vol)))
    assert read_volume(p) == vol


def test_traversal_order(tmp_path):
    nx, ny, nz = 3, 4, 5
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ramp = (i + nx * (j + ny * k)).astype(np.float32)
    vol = Volume3(ramp)
    write_volume(vol, tmp_path / "r.nii")
    payload = np.frombuffer((tmp_path / "r.nii").read_bytes()[352:], "<f4")
    for (a, b, c) in [(0, 0, 0), (2, 0, 0), (0, 1, 0), (1, 2, 3), (2, 3, 4)]:
        off = a + nx * (b + ny * c)
        assert payload[off] == off
        assert vol.flat()[off] == ramp[a, b, c]


def test_label_volume_roundtrip(tmp_path):
    data = np.arange(44, dtype=np.uint16).repeat(2).reshape(4, 11, 2)
    lab = LabelVolume(data)
    write_volume(lab, tmp_path / "l.nii.gz")
    back = read_volume(tmp_path / "l.nii.gz")
    assert isinstance(back, LabelVolume)
    assert back == lab and back.label_count == 44 and int(back.data.max()) == 43
    hdr = gzip.decompress((tmp_path / "l.nii.gz").read_bytes())
    assert struct.unpack_from("<h", hdr, 70)[0] == 512


def test_label_invariant():
    with pytest.raises(DataError):
        LabelVolume(np.full((2, 2, 2), 44))
    assert LabelVolume(np.full((2, 2, 2), 44), label_count=45).label_count == 45


def test_read_labels_from_float_file(tmp_path):
    write_volume(Volume3(np.array([[[0, 1], [2, 3]]], np.float32)), tmp_path / "f.nii")
    lab = read_labels(tmp_path / "f.nii")
    assert lab.data.dtype == np.uint16 and lab.data.max() == 3


def test_coord_volume_roundtrip(tmp_path, rng):
    c = CoordVolume(rng.normal(size=(3, 4, 2, 3)))
    write_volume(c, tmp_path / "c.nii")
    back = read_volume(tmp_path / "c.nii")
    assert isinstance(back, CoordVolume) and back == c


def test_geometry_invariants():
    with pytest.raises(GeometryError):
        Volume3(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))
    with pytest.raises(GeometryError):
        Volume3(np.zeros((2, 2, 2)), affine=np.zeros((4, 4)))
    with pytest.raises(GeometryError):
        Volume3(np.zeros((2, 2)))


def test_volumes_are_immutable():
    vol = Volume3(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 1


def test_load_nmr_set(tmp_path, small_phantom):
    _, nmr, _, _ = small_phantom
    paths = [tmp_path / f"{n}.nii" for n in ("rho", "t1", "t2")]
    for v, p in zip((nmr.rho, nmr.t1, nmr.t2), paths):
        write_volume(v, p)
    loaded = load_nmr_set(*paths)
    assert loaded.rho == nmr.rho and loaded.t2 == nmr.t2


def test_load_nmr_set_geometry_mismatch(tmp_path):
    write_volume(Volume3(np.ones((64, 64, 64))), tmp_path / "r.nii")
    write_volume(Volume3(np.ones((64, 64, 63))), tmp_path / "t1.nii")
    write_volume(Volume3(np.ones((64, 64, 64))), tmp_path / "t2.nii")
    with pytest.raises(GeometryError) as exc:
        load_nmr_set(tmp_path / "r.nii", tmp_path / "t1.nii", tmp_path / "t2.nii")
    assert "(64, 64, 64)" in str(exc.value) and "(64, 64, 63)" in str(exc.value)


def test_load_nmr_set_zero_t1_in_foreground(tmp_path):
    t1 = np.full((4, 4, 4), 800.0)
    t1[1, 2, 3] = 0
    for name, d in (("r", np.ones((4, 4, 4))), ("t1", t1), ("t2", np.full((4, 4, 4), 80.0))):
        write_volume(Volume3(d), tmp_path / f"{name}.nii")
    with pytest.raises(DataError) as exc:
        load_nmr_set(tmp_path / "r.nii", tmp_path / "t1.nii", tmp_path / "t2.nii")
    assert exc.value.index == (1, 2, 3)


def test_nmr_set_constructor_mismatch():
    a = Volume3(np.ones((2, 2, 2)))
    b = Volume3(np.ones((2, 2, 2)), (2.0, 1.0, 1.0))
    with pytest.raises(GeometryError):
        NMRVolumeSet(a, b, a)


def test_write_to_missing_directory(tmp_path):
    with pytest.raises(OSError) as exc:
        write_volume(Volume3(np.zeros((2, 2, 2))), tmp_path / "nope" / "x.nii")
    assert "nope" in str(exc.value)


@pytest.mark.slow
def test_256_cubed_io_speed(tmp_path):
    vol = Volume3(np.random.default_rng(0).random((256, 256, 256), dtype=np.float32))
    t = time.perf_counter()
    write_volume(vol, tmp_path / "big.nii")
    back = read_volume(tmp_path / "big.nii")
    elapsed = time.perf_counter() - t
    assert back == vol
    assert elapsed < 2.0, elapsed
