"""Client side of the model-oracle wire protocol.

A session speaks length-prefixed frames to a child process (stdio pipes) or
a TCP endpoint:

    frame   := u64le total_length, header_line, payload
    header  := canonical JSON (sorted keys, no spaces) + "\\n"
    payload := raw NPY v1.0 bytes, possibly empty
              (total_length = len(header_line) + len(payload))

Header types: hello, score, score_result, attentions, attentions_result,
gradients, gradients_result, error. The client opens with a hello carrying
the protocol version; the server's hello answers with model metadata. Every
request carries a monotonically increasing u64 ``id`` which the response
must echo; one request is in flight per session at a time. Sessions are
confined to one thread; use one session per worker for parallelism.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import socket
import struct
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from . import npyio
from .bundle import validate_attention_tensor
from .errors import BundleInvalid, GradientMissing, OracleError, ProtocolError

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0
_MAX_FRAME = 1 << 33  # 8 GiB sanity bound on claimed frame lengths


@dataclass(frozen=True)
class OracleInfo:
    """Model metadata from the handshake."""

    model: str
    class_count: int
    layers: int
    heads: int
    tokens: int
    input_shape: tuple[int, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    line = json.dumps(header, separators=(",", ":"), sort_keys=True).encode() + b"\n"
    return struct.pack("<Q", len(line) + len(payload)) + line + payload


class _StdioTransport:
    """Child process with the protocol on stdin/stdout; stderr passes through."""

    def __init__(self, argv: list[str]):
        try:
            self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise OracleError(f"cannot spawn oracle {argv!r}: {exc}") from exc

    def write(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise OracleError(f"oracle process closed its stdin: {exc}") from exc

    def read_exact(self, n: int, deadline: float) -> bytes:
        fd = self.proc.stdout.fileno()
        chunks = []
        remaining = n
        while remaining > 0:
            budget = deadline - time.monotonic()
            if budget <= 0:
                raise OracleError(f"oracle timed out with {remaining} bytes outstanding")
            ready, _, _ = select.select([fd], [], [], budget)
            if not ready:
                raise OracleError(f"oracle timed out with {remaining} bytes outstanding")
            chunk = os.read(fd, remaining)
            if not chunk:
                raise OracleError("oracle process closed its stdout mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise OracleError(f"cannot connect to oracle at {host}:{port}: {exc}") from exc

    def write(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise OracleError(f"oracle connection lost: {exc}") from exc

    def read_exact(self, n: int, deadline: float) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            budget = deadline - time.monotonic()
            if budget <= 0:
                raise OracleError(f"oracle timed out with {remaining} bytes outstanding")
            self.sock.settimeout(budget)
            try:
                chunk = self.sock.recv(remaining)
            except socket.timeout:
                raise OracleError(f"oracle timed out with {remaining} bytes outstanding") from None
            except OSError as exc:
                raise OracleError(f"oracle connection lost: {exc}") from exc
            if not chunk:
                raise OracleError("oracle closed the connection mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class OracleSession:
    """One conversation with a model oracle; thread-confined, context-managed."""

    def __init__(self, transport, timeout: float = DEFAULT_TIMEOUT):
        self._transport = transport
        self._timeout = timeout
        self._next_id = 0
        self.info: OracleInfo | None = None

    @classmethod
    def open(cls, spec: str, timeout: float = DEFAULT_TIMEOUT) -> "OracleSession":
        """Connect per an oracle spec: "cmd:<argv>" or "tcp:<host>:<port>"."""
        if spec.startswith("cmd:"):
            argv = shlex.split(spec[4:])
            if not argv:
                raise ValueError("empty command in oracle spec")
            return cls(_StdioTransport(argv), timeout)
        if spec.startswith("tcp:"):
            host, _, port = spec[4:].rpartition(":")
            if not host or not port.isdigit():
                raise ValueError(f"bad tcp oracle spec {spec!r}; want tcp:<host>:<port>")
            return cls(_TcpTransport(host, int(port), timeout), timeout)
        raise ValueError(f"unrecognized oracle spec {spec!r}; want cmd:... or tcp:...")

    def __enter__(self) -> "OracleSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self._transport.close()

    # --- framing ---------------------------------------------------------

    def _send(self, header: dict, payload: bytes = b"") -> None:
        self._transport.write(encode_frame(header, payload))

    def _recv(self) -> tuple[dict, bytes]:
        deadline = time.monotonic() + self._timeout
        (length,) = struct.unpack("<Q", self._transport.read_exact(8, deadline))
        if length == 0 or length > _MAX_FRAME:
            raise ProtocolError(f"implausible frame length {length}")
        body = self._transport.read_exact(length, deadline)
        line, sep, payload = body.partition(b"\n")
        if not sep:
            raise ProtocolError("frame header line lacks a newline terminator")
        try:
            header = json.loads(line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"frame header is not JSON: {exc}") from exc
        if not isinstance(header, dict) or "type" not in header:
            raise ProtocolError(f"frame header missing 'type': {header!r}")
        return header, payload

    def _request(self, header: dict, payload: bytes, expect: str) -> tuple[dict, bytes]:
        request_id = self._next_id
        self._next_id += 1
        header = dict(header, id=request_id)
        self._send(header, payload)
        reply, reply_payload = self._recv()
        if reply.get("id") != request_id:
            raise ProtocolError(f"response id {reply.get('id')!r} for request {request_id}")
        if reply["type"] == "error":
            raise OracleError(f"oracle error: {reply.get('message', '<no message>')}")
        if reply["type"] != expect:
            raise ProtocolError(f"expected {expect!r} frame, got {reply['type']!r}")
        return reply, reply_payload

    # --- requests --------------------------------------------------------

    def handshake(self) -> OracleInfo:
        """Exchange hellos and capture the model metadata; idempotent."""
        if self.info is not None:
            return self.info
        reply, _ = self._request(
            {"type": "hello", "version": PROTOCOL_VERSION}, b"", expect="hello"
        )
        if reply.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(
                f"oracle speaks protocol {reply.get('version')!r}, need {PROTOCOL_VERSION}"
            )
        try:
            self.info = OracleInfo(
                model=str(reply["model"]),
                class_count=int(reply["class_count"]),
                layers=int(reply["layers"]),
                heads=int(reply["heads"]),
                tokens=int(reply["tokens"]),
                input_shape=tuple(int(d) for d in reply["input_shape"]),
                mean=tuple(float(v) for v in reply["mean"]),
                std=tuple(float(v) for v in reply["std"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed hello frame: {exc}") from exc
        return self.info

    def score(self, image) -> np.ndarray:
        """Softmax probabilities for one [C,H,W] image or a [B,C,H,W] batch."""
        self.handshake()
        payload = npyio.encode_tensor(np.asarray(image, dtype=np.float32))
        _, reply_payload = self._request({"type": "score"}, payload, expect="score_result")
        probs = npyio.decode_tensor(reply_payload, name="score_result").astype(np.float64)
        sums = probs.sum(axis=-1)
        if np.abs(sums - 1.0).max() > 1e-4:
            raise OracleError(f"scores are not probability vectors (sums {sums!r})")
        return probs

    def get_attentions(self, image) -> np.ndarray:
        """Post-softmax attention tensor [L, H, T, T] for one image."""
        self.handshake()
        payload = npyio.encode_tensor(np.asarray(image, dtype=np.float32))
        _, reply_payload = self._request(
            {"type": "attentions"}, payload, expect="attentions_result"
        )
        att = npyio.decode_tensor(reply_payload, name="attentions_result")
        if att.ndim != 4:
            raise BundleInvalid("attention-shape", f"oracle sent shape {att.shape}")
        validate_attention_tensor(att, name="oracle attentions")
        return att

    def get_gradients(self, image, class_id: int) -> np.ndarray:
        """Attention gradients [L, H, T, T] for the given target class."""
        self.handshake()
        payload = npyio.encode_tensor(np.asarray(image, dtype=np.float32))
        try:
            _, reply_payload = self._request(
                {"type": "gradients", "class": int(class_id)}, payload, expect="gradients_result"
            )
        except OracleError as exc:
            raise GradientMissing(f"class {class_id}: {exc}") from exc
        grad = npyio.decode_tensor(reply_payload, name="gradients_result")
        if grad.ndim != 4:
            raise BundleInvalid("gradient-shape", f"oracle sent shape {grad.shape}")
        return grad
