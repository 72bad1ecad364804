"""Blocking client for the frame protocol."""
from __future__ import annotations

import json
import socket

from .errors import ProtocolError, SavimeError
from .protocol import (
    DATASET_PUSH,
    DONE,
    ERROR,
    QUERY,
    RESULT_BLOCK,
    RESULT_SCHEMA,
    Frame,
    ResultSet,
    assemble,
    encode_frame,
    push_payload,
    read_frame,
)


class RemoteError(SavimeError):
    """The server answered with an ERROR frame."""


class Client:
    def __init__(self, host: str = "127.0.0.1", port: int = 65000, timeout: float | None = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("rb")
        self.frames: list[Frame] = []  # kinds of the last exchange, for inspection

    def close(self) -> None:
        self.rfile.close()
        self.sock.close()

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _next(self) -> Frame:
        frame = read_frame(self.rfile)
        if frame is None:
            raise ProtocolError("server closed the connection")
        self.frames.append(frame)
        return frame

    def query(self, text: str) -> ResultSet:
        self.frames = []
        self.sock.sendall(encode_frame(QUERY, text.encode("utf-8")))
        first = self._next()
        if first.kind == ERROR:
            raise RemoteError(first.text())
        if first.kind != RESULT_SCHEMA:
            raise ProtocolError(f"expected RESULT_SCHEMA, got {first.name}")
        schema = json.loads(first.payload)
        blocks = []
        while True:
            frame = self._next()
            if frame.kind == DONE:
                return assemble(schema, blocks)
            if frame.kind != RESULT_BLOCK:
                raise ProtocolError(f"expected RESULT_BLOCK or DONE, got {frame.name}")
            blocks.append(frame.payload)

    def push_dataset(self, name: str, element_type: str, data: bytes) -> None:
        self.frames = []
        self.sock.sendall(encode_frame(DATASET_PUSH, push_payload(name, element_type, data)))
        frame = self._next()
        if frame.kind == ERROR:
            raise RemoteError(frame.text())
        if frame.kind != DONE:
            raise ProtocolError(f"expected DONE, got {frame.name}")
