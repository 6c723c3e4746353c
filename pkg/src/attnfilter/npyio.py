"""Minimal NPY v1.0 reader/writer.

Every tensor this package exchanges (bundle files, oracle payloads) travels
as an NPY v1.0 container: 6-byte magic ``\\x93NUMPY``, version bytes
``0x01 0x00``, little-endian u16 header length, then a Python-literal header
dict with ``descr``/``fortran_order``/``shape``. Only little-endian float32
and float64 C-order data are accepted; float64 is narrowed to float32 on
read (with a warning) so bundles round-trip bit-exactly in float32.

The byte layout written here matches what ``numpy.save`` emits for the same
arrays (header padded with spaces to a 64-byte boundary, newline-terminated).
"""

from __future__ import annotations

import ast
import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import DtypeError, FormatError, IoError

MAGIC = b"\x93NUMPY"
VERSION = b"\x01\x00"

_DESCRS = {np.dtype(np.float32): "<f4", np.dtype(np.float64): "<f8"}
_ACCEPTED = {"<f4", "<f8"}


def encode_tensor(array: np.ndarray) -> bytes:
    """Serialize *array* to NPY v1.0 bytes (float32/float64 only)."""
    arr = np.asarray(array)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)  # keeps 0-d shapes, unlike calling it outright
    descr = _DESCRS.get(arr.dtype)
    if descr is None:
        raise DtypeError(f"refusing to encode dtype {arr.dtype}; use float32 or float64")
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr,
        repr(tuple(int(d) for d in arr.shape)),
    )
    base = len(MAGIC) + len(VERSION) + 2  # magic + version + u16 length
    pad = (-(base + len(header) + 1)) % 64
    header = header + " " * pad + "\n"
    return b"".join(
        [MAGIC, VERSION, struct.pack("<H", len(header)), header.encode("latin1"), arr.tobytes()]
    )


def decode_tensor(data: bytes, name: str = "<bytes>") -> np.ndarray:
    """Parse NPY v1.0 bytes into an ndarray; float64 narrows to float32."""
    if len(data) < 10 or data[:6] != MAGIC:
        raise FormatError(f"{name}: not an NPY v1.0 container (bad magic)")
    if data[6:8] != VERSION:
        raise FormatError(f"{name}: unsupported NPY version {data[6]}.{data[7]}")
    (hlen,) = struct.unpack_from("<H", data, 8)
    header_end = 10 + hlen
    if len(data) < header_end:
        raise FormatError(f"{name}: truncated header")
    try:
        header = ast.literal_eval(data[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{name}: unparseable header") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{name}: malformed header dict {header!r}")
    if header["fortran_order"] is not False:
        raise FormatError(f"{name}: fortran_order must be false")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise FormatError(f"{name}: bad shape {shape!r}")
    descr = header["descr"]
    if descr not in _ACCEPTED:
        raise DtypeError(f"{name}: unsupported dtype {descr!r} (need <f4 or <f8)")
    dtype = np.dtype(descr)
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = data[header_end:]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(
            f"{name}: payload is {len(payload)} bytes, expected {count * dtype.itemsize}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if dtype == np.float64:
        warnings.warn(f"{name}: narrowing float64 tensor to float32", stacklevel=2)
        return arr.astype(np.float32)
    return arr.copy()  # detach from the shared read-only buffer


def write_tensor(path, array: np.ndarray) -> None:
    """Write *array* to *path* as an NPY v1.0 file."""
    data = encode_tensor(array)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_tensor(path) -> np.ndarray:
    """Read an NPY v1.0 file; returns float32 (float64 narrowed with a warning)."""
    p = Path(path)
    if not p.exists():
        raise FormatError(f"{path}: no such file")
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_tensor(data, name=str(path))
