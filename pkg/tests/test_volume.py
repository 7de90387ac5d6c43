"""Volume I/O: hand-built NIfTI fixtures, round trips, error paths."""

import gzip
import struct

import numpy as np
import pytest

from ageseg.errors import (
    LabelDomainError,
    TruncatedVolumeError,
    VolumeFormatError,
)
from ageseg.volume import LabelVolume, ScalarVolume, read_volume, write_volume


def build_nifti_bytes(
    dims=(4, 4, 4),
    spacing=(1.5, 1.5, 1.5),
    datatype=4,
    data=None,
    order="<",
    magic=b"n+1\x00",
    vox_offset=352.0,
    dim0=3,
):
    """Assemble NIfTI-1 bytes by hand, independent of the package writer."""
    dtype = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8", 256: "i1", 512: "u2"}[datatype]
    np_dtype = np.dtype(order + dtype)
    if data is None:
        n = dims[0] * dims[1] * dims[2]
        data = np.arange(n, dtype=np_dtype)
    hdr = bytearray(348)
    struct.pack_into(order + "i", hdr, 0, 348)
    struct.pack_into(order + "8h", hdr, 40, dim0, *dims, 1, 1, 1, 1)
    struct.pack_into(order + "h", hdr, 70, datatype)
    struct.pack_into(order + "h", hdr, 72, np_dtype.itemsize * 8)
    struct.pack_into(order + "8f", hdr, 76, 1.0, *spacing, 0, 0, 0, 0)
    struct.pack_into(order + "f", hdr, 108, vox_offset)
    struct.pack_into(order + "4s", hdr, 344, magic)
    pad = b"\x00" * (int(vox_offset) - 348)
    return bytes(hdr) + pad + np.asarray(data, dtype=np_dtype).tobytes(order="F")


def test_minimal_fixture_header_fields(tmp_path):
    path = tmp_path / "fix.nii"
    path.write_bytes(build_nifti_bytes())
    vol = read_volume(path, kind="scalar")
    assert vol.dims == (4, 4, 4)
    assert vol.spacing == (1.5, 1.5, 1.5)
    assert vol.data.dtype == np.int16


def test_fixture_data_is_x_fastest(tmp_path):
    data = np.arange(24, dtype=np.int16)
    path = tmp_path / "fix.nii"
    path.write_bytes(build_nifti_bytes(dims=(2, 3, 4), data=data))
    vol = read_volume(path)
    # first on-disk value is voxel (0,0,0), second is (1,0,0)
    assert vol.data[0, 0, 0] == 0
    assert vol.data[1, 0, 0] == 1
    assert vol.data[0, 1, 0] == 2
    assert vol.data[0, 0, 1] == 6


def test_gzipped_fixture(tmp_path):
    path = tmp_path / "fix.nii.gz"
    path.write_bytes(gzip.compress(build_nifti_bytes()))
    vol = read_volume(path)
    assert vol.dims == (4, 4, 4)


def test_big_endian_fixture_byteswapped(tmp_path):
    data = np.array([1, -2, 300, 4, 5, 6, 7, 8], dtype=">i2")
    path = tmp_path / "be.nii"
    path.write_bytes(
        build_nifti_bytes(dims=(2, 2, 2), spacing=(1, 2, 3), data=data, order=">")
    )
    vol = read_volume(path)
    assert vol.spacing == (1.0, 2.0, 3.0)
    assert np.array_equal(vol.data.ravel(order="F"), [1, -2, 300, 4, 5, 6, 7, 8])


def test_truncated_payload_rejected(tmp_path):
    blob = build_nifti_bytes()
    path = tmp_path / "short.nii"
    path.write_bytes(blob[:-10])
    with pytest.raises(TruncatedVolumeError):
        read_volume(path)


def test_unknown_magic_rejected(tmp_path):
    path = tmp_path / "bad.nii"
    path.write_bytes(build_nifti_bytes(magic=b"xyz\x00"))
    with pytest.raises(VolumeFormatError):
        read_volume(path)


def test_paired_hdr_img_rejected(tmp_path):
    path = tmp_path / "pair.nii"
    path.write_bytes(build_nifti_bytes(magic=b"ni1\x00"))
    with pytest.raises(VolumeFormatError, match="paired"):
        read_volume(path)


def test_non_3d_rejected(tmp_path):
    path = tmp_path / "4d.nii"
    path.write_bytes(build_nifti_bytes(dim0=4))
    with pytest.raises(VolumeFormatError):
        read_volume(path)


def test_garbage_rejected(tmp_path):
    path = tmp_path / "junk.nii"
    path.write_bytes(b"not a volume at all" * 30)
    with pytest.raises(VolumeFormatError):
        read_volume(path)


@pytest.mark.parametrize(
    "dtype", [np.uint8, np.int8, np.int16, np.uint16, np.int32, np.float32, np.float64]
)
def test_nifti_roundtrip_all_dtypes(tmp_path, dtype):
    rng = np.random.default_rng(0)
    if np.dtype(dtype).kind == "f":
        data = rng.normal(size=(3, 4, 5)).astype(dtype)
    else:
        info = np.iinfo(dtype)
        data = rng.integers(info.min, info.max, size=(3, 4, 5), endpoint=True).astype(dtype)
    vol = ScalarVolume(data, spacing=(0.7, 1.5, 2.25), origin=(-10.0, 3.5, 0.0))
    path = tmp_path / "rt.nii"
    write_volume(vol, path)
    back = read_volume(path)
    assert back.dims == vol.dims
    assert back.spacing == pytest.approx(vol.spacing)
    assert back.origin == pytest.approx(vol.origin)
    assert back.data.dtype == np.dtype(dtype)
    assert np.array_equal(back.data, vol.data)


def test_nifti_gz_roundtrip_and_deterministic_bytes(tmp_path):
    vol = ScalarVolume(np.zeros((2, 2, 2), dtype=np.float32), spacing=(1, 1, 1))
    p1, p2 = tmp_path / "a.nii.gz", tmp_path / "b.nii.gz"
    write_volume(vol, p1)
    write_volume(vol, p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = read_volume(p1)
    assert np.array_equal(back.data, vol.data)


def test_label_roundtrip_multiset(tmp_path):
    labels = np.zeros((3, 3, 3), dtype=np.int32)
    labels[0, 0, 0] = 1
    labels[2, 2, 2] = 19
    vol = LabelVolume(labels, spacing=(1, 1, 1), num_classes=19)
    path = tmp_path / "lab.nii.gz"
    write_volume(vol, path)
    back = read_volume(path, kind="label", num_classes=19)
    assert np.array_equal(back.labels, labels)
    assert back.num_classes == 19


def test_label_negative_rejected(tmp_path):
    data = np.array([[-1, 0], [1, 2]], dtype=np.int16).reshape(2, 2, 1)
    path = tmp_path / "neg.nii"
    path.write_bytes(build_nifti_bytes(dims=(2, 2, 1), data=data))
    with pytest.raises(LabelDomainError):
        read_volume(path, kind="label")


def test_label_non_integral_rejected(tmp_path):
    data = np.array([0.0, 1.5, 2.0, 3.0], dtype=np.float32)
    path = tmp_path / "frac.nii"
    path.write_bytes(build_nifti_bytes(dims=(4, 1, 1), datatype=16, data=data))
    with pytest.raises(LabelDomainError):
        read_volume(path, kind="label")


def test_nan_rejected_before_write(tmp_path):
    data = np.ones((2, 2, 2), dtype=np.float32)
    vol = ScalarVolume(data, spacing=(1, 1, 1))
    bad = vol.data.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ScalarVolume(bad, spacing=(1, 1, 1))


def test_scalar_volume_invariants():
    with pytest.raises(ValueError):
        ScalarVolume(np.zeros((2, 2)), spacing=(1, 1, 1))
    with pytest.raises(ValueError):
        ScalarVolume(np.zeros((2, 2, 2)), spacing=(0, 1, 1))
    with pytest.raises(ValueError):
        ScalarVolume(np.zeros((2, 2, 2)), spacing=(1, np.inf, 1))


def test_label_volume_invariants():
    with pytest.raises(LabelDomainError):
        LabelVolume(np.full((2, 2, 2), 7, dtype=np.int32), spacing=(1, 1, 1), num_classes=5)
    with pytest.raises(LabelDomainError):
        LabelVolume(np.zeros((2, 2, 2), dtype=np.float32), spacing=(1, 1, 1))
    vol = LabelVolume(np.full((2, 2, 2), 3, dtype=np.int32), spacing=(1, 1, 1))
    assert vol.num_classes == 3


def test_volumes_are_read_only():
    vol = ScalarVolume(np.zeros((2, 2, 2), dtype=np.float32), spacing=(1, 1, 1))
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 1.0


def test_vvol_roundtrip(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(3, 2, 2)
    vol = ScalarVolume(data, spacing=(0.5, 1.0, 2.0))
    path = tmp_path / "t.vvol"
    write_volume(vol, path)
    assert path.stat().st_size == 32 + 12 * 4
    back = read_volume(path)
    assert back.spacing == (0.5, 1.0, 2.0)
    assert np.array_equal(back.data, data)

    labels = np.array([0, 1, 19, 2], dtype=np.int32).reshape(2, 2, 1)
    lvol = LabelVolume(labels, spacing=(1, 1, 1), num_classes=19)
    lpath = tmp_path / "t2.vvol.gz"
    write_volume(lvol, lpath)
    lback = read_volume(lpath, kind="label", num_classes=19)
    assert np.array_equal(lback.labels, labels)


def test_vvol_truncation(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(3, 2, 2)
    path = tmp_path / "t.vvol"
    write_volume(ScalarVolume(data, spacing=(1, 1, 1)), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TruncatedVolumeError):
        read_volume(path)


def test_unknown_extension_on_write(tmp_path):
    vol = ScalarVolume(np.zeros((2, 2, 2), dtype=np.float32), spacing=(1, 1, 1))
    with pytest.raises(VolumeFormatError):
        write_volume(vol, tmp_path / "v.mha")


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        read_volume("/nonexistent/path.nii")
