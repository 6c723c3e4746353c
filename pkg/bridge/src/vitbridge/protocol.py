"""Server-side framing for the oracle wire protocol.

frame := u64le total_length, header_line, payload
header := canonical JSON (sorted keys, compact separators) + "\n"
payload := NPY bytes (numpy's own encoder), possibly empty
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

PROTOCOL_VERSION = 1


def read_frame(stream) -> tuple[dict, bytes] | None:
    """One frame from a binary stream, or None on clean EOF."""
    raw = stream.read(8)
    if not raw:
        return None
    if len(raw) < 8:
        raise ValueError("truncated frame length prefix")
    (length,) = struct.unpack("<Q", raw)
    body = stream.read(length)
    if len(body) < length:
        raise ValueError("truncated frame body")
    line, sep, payload = body.partition(b"\n")
    if not sep:
        raise ValueError("frame header lacks newline terminator")
    return json.loads(line.decode()), payload


def write_frame(stream, header: dict, payload: bytes = b"") -> None:
    line = json.dumps(header, separators=(",", ":"), sort_keys=True).encode() + b"\n"
    stream.write(struct.pack("<Q", len(line) + len(payload)) + line + payload)
    stream.flush()


def npy_encode(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def npy_decode(data: bytes) -> np.ndarray:
    return np.load(io.BytesIO(data))
