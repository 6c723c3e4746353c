"""Oracle server: answers hello/score/attentions/gradients requests.

Per-request failures are answered with error frames; the serve loop stays
alive until the peer closes the stream. One request is in flight at a time,
matching the protocol contract.
"""

from __future__ import annotations

import logging
import socket
import sys

import numpy as np

from .model import IMAGE_MEAN, IMAGE_STD, HookedViT
from .protocol import PROTOCOL_VERSION, npy_decode, npy_encode, read_frame, write_frame

log = logging.getLogger("vitbridge")


def hello_frame(model: HookedViT, request_id) -> dict:
    return {
        "type": "hello",
        "id": request_id,
        "version": PROTOCOL_VERSION,
        "model": model.name,
        "class_count": model.class_count,
        "layers": model.layers,
        "heads": model.heads,
        "tokens": model.tokens,
        "input_shape": list(model.input_shape),
        "mean": list(IMAGE_MEAN),
        "std": list(IMAGE_STD),
    }


def handle_request(model: HookedViT, header: dict, payload: bytes, out) -> None:
    request_id = header.get("id")
    kind = header.get("type")
    try:
        if kind == "hello":
            write_frame(out, hello_frame(model, request_id))
            return
        image = npy_decode(payload) if payload else None
        if kind == "score":
            probs = model.score(image).astype(np.float32)
            write_frame(out, {"type": "score_result", "id": request_id}, npy_encode(probs))
        elif kind == "attentions":
            write_frame(
                out, {"type": "attentions_result", "id": request_id}, npy_encode(model.attentions(image))
            )
        elif kind == "gradients":
            grad = model.gradients(image, int(header["class"]))
            write_frame(out, {"type": "gradients_result", "id": request_id}, npy_encode(grad))
        else:
            write_frame(out, {"type": "error", "id": request_id, "message": f"unknown type {kind!r}"})
    except Exception as exc:  # noqa: BLE001 - per-request isolation, stay alive
        log.warning("request %s (%s) failed: %s", request_id, kind, exc)
        write_frame(out, {"type": "error", "id": request_id, "message": str(exc)})


def serve_stream(model: HookedViT, inp, out) -> None:
    while True:
        try:
            frame = read_frame(inp)
        except (ValueError, OSError) as exc:
            log.warning("closing on malformed frame: %s", exc)
            return
        if frame is None:
            return
        handle_request(model, frame[0], frame[1], out)


def serve_stdio(model: HookedViT) -> None:
    log.info("serving %s on stdio", model.name)
    serve_stream(model, sys.stdin.buffer, sys.stdout.buffer)


def serve_tcp(model: HookedViT, port: int, announce=None) -> None:
    listener = socket.create_server(("127.0.0.1", port))
    bound = listener.getsockname()[1]
    log.info("serving %s on tcp port %d", model.name, bound)
    if announce is not None:
        announce(bound)
    while True:
        conn, peer = listener.accept()
        log.info("connection from %s", peer)
        with conn:
            stream = conn.makefile("rwb")
            serve_stream(model, stream, stream)
