"""Minimal NIfTI-1 reader: enough to pull a 2D slice with HU scaling.

Supports .nii and .nii.gz, the common scalar dtypes, and scl_slope /
scl_inter rescaling. Anything fancier (extensions, qform/sform geometry,
RGB data) is out of scope here.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
MAGIC_OK = (b"n+1\x00", b"ni1\x00")

# NIfTI datatype code -> numpy dtype
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}


class NiftiError(ValueError):
    """Raised for unreadable or unsupported NIfTI files."""


def _read_bytes(path: Path) -> bytes:
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def read_nifti(path) -> tuple[np.ndarray, dict]:
    """Return (data array, header info dict) for a NIfTI-1 file.

    The array is float64 with scl_slope/scl_inter already applied and axes
    ordered (dim1, dim2[, dim3, ...]) as stored.
    """
    path = Path(path)
    try:
        raw = _read_bytes(path)
    except OSError as exc:
        raise NiftiError(f"{path}: cannot read file: {exc}") from exc
    if len(raw) < HEADER_SIZE + 4:
        raise NiftiError(f"{path}: file too short for a NIfTI-1 header")

    for byteorder in ("<", ">"):
        sizeof_hdr = struct.unpack(byteorder + "i", raw[0:4])[0]
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise NiftiError(f"{path}: corrupted header (sizeof_hdr != {HEADER_SIZE})")
    magic = raw[344:348]
    if magic not in MAGIC_OK:
        raise NiftiError(f"{path}: bad NIfTI magic {magic!r}")

    dim = struct.unpack(byteorder + "8h", raw[40:56])
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiError(f"{path}: invalid ndim {ndim}")
    shape = tuple(int(d) for d in dim[1 : 1 + ndim])
    datatype, bitpix = struct.unpack(byteorder + "2h", raw[70:74])
    if datatype not in _DTYPES:
        raise NiftiError(f"{path}: unsupported NIfTI datatype code {datatype}")
    pixdim = struct.unpack(byteorder + "8f", raw[76:108])
    vox_offset = struct.unpack(byteorder + "f", raw[108:112])[0]
    scl_slope, scl_inter = struct.unpack(byteorder + "2f", raw[112:120])

    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(byteorder)
    count = int(np.prod(shape))
    offset = int(vox_offset)
    expected = offset + count * dtype.itemsize
    if len(raw) < expected:
        raise NiftiError(f"{path}: truncated data ({len(raw)} bytes, need {expected})")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    # NIfTI stores fastest-varying dim first (Fortran order).
    data = data.reshape(shape, order="F").astype(np.float64)
    if scl_slope not in (0.0,) and np.isfinite(scl_slope):
        if scl_slope != 1.0 or scl_inter != 0.0:
            data = data * scl_slope + scl_inter

    info = {
        "shape": shape,
        "pixdim": tuple(float(p) for p in pixdim[1 : 1 + ndim]),
        "scl_slope": float(scl_slope),
        "scl_inter": float(scl_inter),
    }
    return data, info


def write_nifti(path, data: np.ndarray, pixdim=None):
    """Write a float or int array as an uncompressed NIfTI-1 file (tests/fixtures)."""
    path = Path(path)
    arr = np.asarray(data)
    if arr.dtype == np.float64:
        code, out = 64, arr
    elif arr.dtype == np.float32:
        code, out = 16, arr
    else:
        code, out = 4, arr.astype(np.int16)
    ndim = arr.ndim
    dim = [ndim] + list(arr.shape) + [1] * (7 - ndim)
    pd = [1.0] * 8
    if pixdim is not None:
        for i, p in enumerate(pixdim):
            pd[i + 1] = float(p)

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<2h", hdr, 70, code, out.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, *pd)
    struct.pack_into("<f", hdr, 108, float(HEADER_SIZE + 4))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[344:348] = b"n+1\x00"
    payload = bytes(hdr) + b"\x00" * 4 + np.asfortranarray(out).tobytes(order="F")
    if path.suffix == ".gz":
        payload = gzip.compress(payload)
    path.write_bytes(payload)
