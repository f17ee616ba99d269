"""Minimal NIfTI-1 single-file (.nii) reader/writer.

Only what probability maps need: 3-D volumes, int16/float32/float64
payloads, scl_slope/scl_inter scaling, either byte order (detected via
sizeof_hdr).  Values are validated into [0, 1] on read — up to 1e-3 of
excursion is clipped with a warning, anything further is an error.
Orientation fields are ignored; maps are assumed pre-registered to a
common template.

This layer works on bare arrays indexed [x, y, z] (x fastest in the
file, i.e. Fortran order); the domain wrapper lives in ``data``.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import NiftiError

HEADER_SIZE = 348
_MAGIC_OFFSET = 344
_RANGE_SLACK = 1e-3

# nifti datatype code -> (numpy kind, bitpix)
_DTYPES = {4: ("i2", 16), 16: ("f4", 32), 64: ("f8", 64)}
_WRITE_CODES = {"int16": 4, "float32": 16, "float64": 64}
_INT16_SLOPE = 1.0 / 32767.0


def read_array(path):
    """Read a .nii file into a float64 [x, y, z] array with values in [0, 1]."""
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE + 4:
        raise NiftiError(f"{path}: file shorter than a NIfTI-1 header")
    for endian in ("<", ">"):
        if struct.unpack_from(endian + "i", data, 0)[0] == HEADER_SIZE:
            break
    else:
        raise NiftiError(f"{path}: sizeof_hdr is not 348 in either byte order")

    magic = data[_MAGIC_OFFSET : _MAGIC_OFFSET + 4]
    if magic == b"ni1\x00":
        raise NiftiError(f"{path}: paired .hdr/.img layout is not supported")
    if magic != b"n+1\x00":
        raise NiftiError(f"{path}: bad magic {magic!r}")

    dim = struct.unpack_from(endian + "8h", data, 40)
    if dim[0] != 3:
        raise NiftiError(f"{path}: expected a 3-D volume, dim[0]={dim[0]}")
    extents = tuple(int(d) for d in dim[1:4])
    if min(extents) < 1:
        raise NiftiError(f"{path}: non-positive extents {extents}")

    datatype, bitpix = struct.unpack_from(endian + "2h", data, 70)
    if datatype not in _DTYPES:
        raise NiftiError(
            f"{path}: unsupported datatype code {datatype} "
            "(int16, float32 and float64 are supported)"
        )
    kind, expected_bits = _DTYPES[datatype]
    if bitpix != expected_bits:
        raise NiftiError(f"{path}: bitpix {bitpix} contradicts datatype {datatype}")

    vox_offset = int(struct.unpack_from(endian + "f", data, 108)[0])
    if vox_offset < HEADER_SIZE + 4:
        raise NiftiError(f"{path}: vox_offset {vox_offset} overlaps the header")
    slope, inter = struct.unpack_from(endian + "2f", data, 112)

    count = extents[0] * extents[1] * extents[2]
    payload = np.dtype(endian + kind)
    if len(data) < vox_offset + count * payload.itemsize:
        raise NiftiError(
            f"{path}: truncated, expected {count * payload.itemsize} data bytes "
            f"at offset {vox_offset}"
        )
    raw = np.frombuffer(data, dtype=payload, count=count, offset=vox_offset)
    values = raw.astype(np.float64)
    if slope != 0.0:  # slope 0 means "no scaling" per the standard
        values = values * float(slope) + float(inter)
    values = values.reshape(extents, order="F")

    excess = max(0.0 - float(values.min()), float(values.max()) - 1.0, 0.0)
    if excess > _RANGE_SLACK:
        raise NiftiError(f"{path}: voxel values escape [0,1] by {excess:.3g}")
    if excess > 0.0:
        strayed = int(np.sum((values < 0.0) | (values > 1.0)))
        warnings.warn(
            f"{path}: clipped {strayed} voxels within {_RANGE_SLACK} of [0,1]",
            UserWarning,
            stacklevel=2,
        )
        values = np.clip(values, 0.0, 1.0)
    return values


def write_array(path, values, dtype="float32", byteorder="<"):
    """Write a [0,1]-valued [x, y, z] array as a single-file .nii volume."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise NiftiError(f"only 3-D volumes are written, got shape {values.shape}")
    if values.size == 0:
        raise NiftiError("refusing to write an empty volume")
    if float(values.min()) < 0.0 or float(values.max()) > 1.0:
        raise NiftiError("refusing to write voxels outside [0,1]")
    if dtype not in _WRITE_CODES:
        raise NiftiError(f"unsupported write dtype {dtype!r}")
    if byteorder not in ("<", ">"):
        raise NiftiError(f"byteorder must be '<' or '>', got {byteorder!r}")

    code = _WRITE_CODES[dtype]
    kind, bits = _DTYPES[code]
    if dtype == "int16":
        slope, inter = _INT16_SLOPE, 0.0
        raw = np.round(values / _INT16_SLOPE).astype(byteorder + kind)
    else:
        slope, inter = 0.0, 0.0
        raw = values.astype(byteorder + kind)

    header = bytearray(HEADER_SIZE)
    struct.pack_into(byteorder + "i", header, 0, HEADER_SIZE)
    struct.pack_into(byteorder + "8h", header, 40, 3, *values.shape, 1, 1, 1, 1)
    struct.pack_into(byteorder + "2h", header, 70, code, bits)
    struct.pack_into(byteorder + "8f", header, 76, *([1.0] * 8))  # pixdim
    struct.pack_into(byteorder + "f", header, 108, float(HEADER_SIZE + 4))
    struct.pack_into(byteorder + "2f", header, 112, slope, inter)
    tag = b"volclass probability map"
    header[148 : 148 + len(tag)] = tag  # descrip, purely informational
    header[_MAGIC_OFFSET : _MAGIC_OFFSET + 4] = b"n+1\x00"

    with open(path, "wb") as handle:
        handle.write(bytes(header))
        handle.write(b"\x00\x00\x00\x00")  # no header extensions
        handle.write(raw.tobytes(order="F"))
