"""3D scalar and label volumes plus file I/O.

Two on-disk formats are supported:

* a NIfTI-1 single-file subset (``.nii`` / ``.nii.gz``): 348-byte header,
  ``dim[0] == 3``, datatypes int8/16/32, uint8/16 and float32/64.  Only
  ``dim``, ``pixdim``, ``vox_offset``, ``datatype``/``bitpix``, the
  ``qoffset_*`` origin and ``magic`` are interpreted; qform/sform rotation
  matrices and ``scl_slope``/``scl_inter`` rescaling are ignored.  Files are
  written little-endian; big-endian inputs are byte-swapped on read.
* a minimal native format (``.vvol``) for hand-made fixtures: a 32-byte
  header (magic, dims, spacing, payload code) followed by raw little-endian
  float32 (scalar) or uint16 (label) samples.  The native header has no
  origin field, so the origin is always (0, 0, 0).

Volumes are indexed ``[x, y, z]`` with x fastest-varying on disk.  Arrays
are marked read-only after construction; volumes are safe to share.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ComparisonError,
    LabelDomainError,
    TruncatedVolumeError,
    VolumeFormatError,
)

__all__ = [
    "ScalarVolume",
    "LabelVolume",
    "read_volume",
    "write_volume",
    "require_same_grid",
]

Triple = tuple[float, float, float]


def _as_float_triple(value, name: str) -> Triple:
    t = tuple(float(v) for v in value)
    if len(t) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(t)}")
    return t  # type: ignore[return-value]


def _validate_spacing(spacing: Triple) -> None:
    for s in spacing:
        if not np.isfinite(s) or s <= 0.0:
            raise ValueError(f"spacing components must be finite and > 0, got {spacing}")


@dataclass(frozen=True)
class ScalarVolume:
    """A 3D intensity volume with physical voxel spacing.

    Parameters
    ----------
    data:
        Array of shape ``(nx, ny, nz)``.  Any supported numeric dtype; kept
        as-is so that file round trips are exact.
    spacing:
        Voxel size ``(sx, sy, sz)`` in millimeters, each > 0.
    origin:
        Physical position of voxel (0, 0, 0) in millimeters.
    """

    data: np.ndarray
    spacing: Triple
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {data.shape}")
        if data.dtype.kind == "f" and not np.isfinite(data).all():
            raise ValueError("volume intensities must be finite (no NaN/Inf)")
        spacing = _as_float_triple(self.spacing, "spacing")
        _validate_spacing(spacing)
        origin = _as_float_triple(self.origin, "origin")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class LabelVolume:
    """A 3D label volume; values are integers in ``[0, num_classes]``.

    0 is background.  ``num_classes`` defaults to the largest label present.
    """

    labels: np.ndarray
    spacing: Triple
    origin: Triple = (0.0, 0.0, 0.0)
    num_classes: int | None = None

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"label data must be 3D, got shape {labels.shape}")
        if labels.dtype.kind not in "iu":
            raise LabelDomainError(f"labels must be integers, got dtype {labels.dtype}")
        if labels.size and int(labels.min()) < 0:
            raise LabelDomainError("labels must be non-negative")
        num_classes = self.num_classes
        if num_classes is None:
            num_classes = int(labels.max()) if labels.size else 0
        if labels.size and int(labels.max()) > num_classes:
            raise LabelDomainError(
                f"label {int(labels.max())} exceeds num_classes={num_classes}"
            )
        spacing = _as_float_triple(self.spacing, "spacing")
        _validate_spacing(spacing)
        origin = _as_float_triple(self.origin, "origin")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "num_classes", int(num_classes))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape  # type: ignore[return-value]

    def with_num_classes(self, num_classes: int) -> "LabelVolume":
        """Return the same volume declared over ``num_classes`` classes."""
        return LabelVolume(self.labels, self.spacing, self.origin, num_classes)


def require_same_grid(a, b, context: str = "volumes") -> None:
    """Raise :class:`ComparisonError` unless a and b share dims and spacing."""
    if a.dims != b.dims:
        raise ComparisonError(f"{context}: dims differ, {a.dims} vs {b.dims}")
    if not np.allclose(a.spacing, b.spacing, rtol=0.0, atol=1e-6):
        raise ComparisonError(f"{context}: spacing differs, {a.spacing} vs {b.spacing}")


# --------------------------------------------------------------------------
# NIfTI-1 subset
# --------------------------------------------------------------------------

# (struct format, field name) pairs for the full 348-byte NIfTI-1 header.
_NIFTI_FIELDS = [
    ("i", "sizeof_hdr"),
    ("10s", "data_type"),
    ("18s", "db_name"),
    ("i", "extents"),
    ("h", "session_error"),
    ("b", "regular"),
    ("b", "dim_info"),
    ("8h", "dim"),
    ("f", "intent_p1"),
    ("f", "intent_p2"),
    ("f", "intent_p3"),
    ("h", "intent_code"),
    ("h", "datatype"),
    ("h", "bitpix"),
    ("h", "slice_start"),
    ("8f", "pixdim"),
    ("f", "vox_offset"),
    ("f", "scl_slope"),
    ("f", "scl_inter"),
    ("h", "slice_end"),
    ("b", "slice_code"),
    ("b", "xyzt_units"),
    ("f", "cal_max"),
    ("f", "cal_min"),
    ("f", "slice_duration"),
    ("f", "toffset"),
    ("i", "glmax"),
    ("i", "glmin"),
    ("80s", "descrip"),
    ("24s", "aux_file"),
    ("h", "qform_code"),
    ("h", "sform_code"),
    ("f", "quatern_b"),
    ("f", "quatern_c"),
    ("f", "quatern_d"),
    ("f", "qoffset_x"),
    ("f", "qoffset_y"),
    ("f", "qoffset_z"),
    ("4f", "srow_x"),
    ("4f", "srow_y"),
    ("4f", "srow_z"),
    ("16s", "intent_name"),
    ("4s", "magic"),
]
_NIFTI_STRUCT = "".join(fmt for fmt, _ in _NIFTI_FIELDS)
assert struct.calcsize("<" + _NIFTI_STRUCT) == 348

# NIfTI datatype code -> numpy dtype (little-endian written form)
_NIFTI_DTYPES = {
    2: np.dtype("uint8"),
    4: np.dtype("int16"),
    8: np.dtype("int32"),
    16: np.dtype("float32"),
    64: np.dtype("float64"),
    256: np.dtype("int8"),
    512: np.dtype("uint16"),
}
_DTYPE_TO_NIFTI_CODE = {dt: code for code, dt in _NIFTI_DTYPES.items()}

_NIFTI_HEADER_SIZE = 348
_NIFTI_DATA_OFFSET = 352  # header + 4 zero extension bytes


def _unpack_nifti_header(raw: bytes) -> tuple[dict, str]:
    if len(raw) < _NIFTI_HEADER_SIZE:
        raise TruncatedVolumeError(
            f"file too short for a NIfTI-1 header ({len(raw)} < {_NIFTI_HEADER_SIZE} bytes)"
        )
    for order in ("<", ">"):
        (size,) = struct.unpack(order + "i", raw[:4])
        if size == _NIFTI_HEADER_SIZE:
            byte_order = order
            break
    else:
        raise VolumeFormatError("sizeof_hdr is not 348 in either byte order")
    values = struct.unpack(byte_order + _NIFTI_STRUCT, raw[:_NIFTI_HEADER_SIZE])
    hdr: dict = {}
    i = 0
    for fmt, name in _NIFTI_FIELDS:
        n = int(fmt[:-1]) if len(fmt) > 1 and fmt[-1] != "s" else 1
        if fmt.endswith("s"):
            hdr[name] = values[i]
            i += 1
        elif n == 1:
            hdr[name] = values[i]
            i += 1
        else:
            hdr[name] = values[i : i + n]
            i += n
    return hdr, byte_order


def _parse_nifti(raw: bytes, path: Path) -> tuple[np.ndarray, Triple, Triple]:
    hdr, order = _unpack_nifti_header(raw)
    magic = hdr["magic"].rstrip(b"\x00")
    if magic == b"ni1":
        raise VolumeFormatError(f"{path}: paired .hdr/.img NIfTI files are not supported")
    if magic != b"n+1":
        raise VolumeFormatError(f"{path}: unknown NIfTI magic {magic!r}")
    dim = hdr["dim"]
    if dim[0] != 3:
        raise VolumeFormatError(f"{path}: only 3D volumes are supported, dim[0]={dim[0]}")
    dims = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in dims):
        raise VolumeFormatError(f"{path}: non-positive dimension in {dims}")
    code = hdr["datatype"]
    if code not in _NIFTI_DTYPES:
        raise VolumeFormatError(f"{path}: unsupported NIfTI datatype code {code}")
    dtype = _NIFTI_DTYPES[code]
    if hdr["bitpix"] != dtype.itemsize * 8:
        raise VolumeFormatError(
            f"{path}: bitpix {hdr['bitpix']} inconsistent with datatype {code}"
        )
    spacing = tuple(float(p) for p in hdr["pixdim"][1:4])
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise VolumeFormatError(f"{path}: non-positive pixdim {spacing}")
    origin = (float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"]))
    offset = int(hdr["vox_offset"])
    if offset < _NIFTI_HEADER_SIZE:
        raise VolumeFormatError(f"{path}: vox_offset {offset} precedes header end")
    count = dims[0] * dims[1] * dims[2]
    needed = count * dtype.itemsize
    payload = raw[offset:]
    if len(payload) < needed:
        raise TruncatedVolumeError(
            f"{path}: header declares {needed} data bytes but only {len(payload)} present"
        )
    arr = np.frombuffer(payload[:needed], dtype=dtype.newbyteorder(order))
    # x varies fastest on disk
    data = arr.reshape(dims, order="F").astype(dtype, copy=True)
    return data, spacing, origin


def _build_nifti_header(dims, spacing, origin, dtype: np.dtype) -> bytes:
    code = _DTYPE_TO_NIFTI_CODE[dtype]
    values: list = []
    defaults = {
        "sizeof_hdr": _NIFTI_HEADER_SIZE,
        "data_type": b"",
        "db_name": b"",
        "extents": 0,
        "session_error": 0,
        "regular": ord("r"),
        "dim_info": 0,
        "dim": (3, dims[0], dims[1], dims[2], 1, 1, 1, 1),
        "intent_p1": 0.0,
        "intent_p2": 0.0,
        "intent_p3": 0.0,
        "intent_code": 0,
        "datatype": code,
        "bitpix": dtype.itemsize * 8,
        "slice_start": 0,
        "pixdim": (1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0),
        "vox_offset": float(_NIFTI_DATA_OFFSET),
        "scl_slope": 0.0,
        "scl_inter": 0.0,
        "slice_end": 0,
        "slice_code": 0,
        "xyzt_units": 2,  # millimeters
        "cal_max": 0.0,
        "cal_min": 0.0,
        "slice_duration": 0.0,
        "toffset": 0.0,
        "glmax": 0,
        "glmin": 0,
        "descrip": b"",
        "aux_file": b"",
        "qform_code": 1,
        "sform_code": 0,
        "quatern_b": 0.0,
        "quatern_c": 0.0,
        "quatern_d": 0.0,
        "qoffset_x": origin[0],
        "qoffset_y": origin[1],
        "qoffset_z": origin[2],
        "srow_x": (0.0, 0.0, 0.0, 0.0),
        "srow_y": (0.0, 0.0, 0.0, 0.0),
        "srow_z": (0.0, 0.0, 0.0, 0.0),
        "intent_name": b"",
        "magic": b"n+1\x00",
    }
    for fmt, name in _NIFTI_FIELDS:
        v = defaults[name]
        if isinstance(v, tuple):
            values.extend(v)
        else:
            values.append(v)
    return struct.pack("<" + _NIFTI_STRUCT, *values)


# --------------------------------------------------------------------------
# Native .vvol fixture format
# --------------------------------------------------------------------------

_VVOL_MAGIC = b"VXL1"
_VVOL_STRUCT = "<4s3I3fHH"  # magic, dims, spacing, payload code, reserved
assert struct.calcsize(_VVOL_STRUCT) == 32
_VVOL_SCALAR = 1  # float32 payload
_VVOL_LABEL = 2  # uint16 payload


def _parse_vvol(raw: bytes, path: Path) -> tuple[np.ndarray, Triple, int]:
    magic, nx, ny, nz, sx, sy, sz, code, _reserved = struct.unpack(
        _VVOL_STRUCT, raw[:32]
    )
    dims = (int(nx), int(ny), int(nz))
    spacing = (float(sx), float(sy), float(sz))
    if code == _VVOL_SCALAR:
        dtype = np.dtype("<f4")
    elif code == _VVOL_LABEL:
        dtype = np.dtype("<u2")
    else:
        raise VolumeFormatError(f"{path}: unknown payload code {code}")
    needed = dims[0] * dims[1] * dims[2] * dtype.itemsize
    payload = raw[32:]
    if len(payload) < needed:
        raise TruncatedVolumeError(
            f"{path}: header declares {needed} data bytes but only {len(payload)} present"
        )
    data = np.frombuffer(payload[:needed], dtype=dtype).reshape(dims, order="F").copy()
    return data, spacing, code


# --------------------------------------------------------------------------
# Public I/O
# --------------------------------------------------------------------------


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_volume(path, kind: str = "scalar", num_classes: int | None = None):
    """Load a volume from ``path``.

    The format is detected from the file content (NIfTI-1 or native magic,
    optionally gzip-compressed).  ``kind`` selects the returned type:
    ``"scalar"`` gives a :class:`ScalarVolume`, ``"label"`` a
    :class:`LabelVolume` whose values must be non-negative integers.
    """
    if kind not in ("scalar", "label"):
        raise ValueError(f"kind must be 'scalar' or 'label', got {kind!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such volume file: {path}")
    raw = _read_bytes(path)
    if raw[:4] == _VVOL_MAGIC:
        data, spacing, _code = _parse_vvol(raw, path)
        origin = (0.0, 0.0, 0.0)
    else:
        data, spacing, origin = _parse_nifti(raw, path)

    if kind == "scalar":
        if data.dtype.kind == "f" and not np.isfinite(data).all():
            raise VolumeFormatError(f"{path}: non-finite intensities in scalar volume")
        return ScalarVolume(data, spacing, origin)

    if data.dtype.kind == "f":
        if not np.isfinite(data).all():
            raise LabelDomainError(f"{path}: non-finite value in label volume")
        if not np.array_equal(data, np.round(data)):
            raise LabelDomainError(f"{path}: non-integral value in label volume")
        data = data.astype(np.int32)
    if data.size and int(data.min()) < 0:
        raise LabelDomainError(f"{path}: negative value in label volume")
    return LabelVolume(data.astype(np.int32, copy=False), spacing, origin, num_classes)


def write_volume(volume, path) -> None:
    """Write a volume to ``path``; the format is chosen by extension.

    ``.nii`` / ``.nii.gz`` emit the NIfTI-1 subset, ``.vvol`` / ``.vvol.gz``
    the native fixture format.  :func:`read_volume` inverts the write exactly
    for supported dtypes.  Gzip members are written with a zeroed timestamp
    so identical volumes produce identical bytes.
    """
    path = Path(path)
    name = path.name.lower()
    gz = name.endswith(".gz")
    stem = name[:-3] if gz else name

    if isinstance(volume, LabelVolume):
        data = volume.labels
        is_label = True
    elif isinstance(volume, ScalarVolume):
        data = volume.data
        is_label = False
        if data.dtype.kind == "f" and not np.isfinite(data).all():
            raise ValueError("refusing to write non-finite intensities")
    else:
        raise TypeError(f"expected ScalarVolume or LabelVolume, got {type(volume)!r}")

    if stem.endswith(".vvol"):
        if is_label:
            if data.size and int(data.max()) > np.iinfo(np.uint16).max:
                raise LabelDomainError("label values exceed uint16 range for .vvol")
            payload = data.astype("<u2")
            code = _VVOL_LABEL
        else:
            payload = data.astype("<f4")
            code = _VVOL_SCALAR
        header = struct.pack(
            _VVOL_STRUCT,
            _VVOL_MAGIC,
            *volume.dims,
            *(float(s) for s in volume.spacing),
            code,
            0,
        )
        blob = header + payload.tobytes(order="F")
    elif stem.endswith(".nii"):
        if is_label:
            native = np.dtype("int32" if int(data.max(initial=0)) > 32767 else "int16")
        else:
            native = np.dtype(data.dtype.name)  # strip any explicit byte order
            if native not in _DTYPE_TO_NIFTI_CODE:
                raise VolumeFormatError(f"dtype {data.dtype} not representable in NIfTI subset")
        out = data.astype(native.newbyteorder("<"))
        header = _build_nifti_header(volume.dims, volume.spacing, volume.origin, native)
        blob = header + b"\x00\x00\x00\x00" + out.tobytes(order="F")
    else:
        raise VolumeFormatError(
            f"cannot choose a format for {path.name!r} (use .nii[.gz] or .vvol[.gz])"
        )

    if gz:
        blob = gzip.compress(blob, compresslevel=6, mtime=0)
    path.write_bytes(blob)
