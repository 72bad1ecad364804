"""Length-prefixed frame protocol.

Every frame is ``length:u32le kind:u8 payload`` with ``length = len(payload) + 1``.

A query is answered by ``RESULT_SCHEMA RESULT_BLOCK* DONE`` or by ``ERROR``.
Block payloads (RESULT_BLOCK and DATASET_PUSH) are ``hlen:u32le`` followed by a
UTF-8 JSON header of ``hlen`` bytes and raw little-endian data. Each result
subTAR is sent as one ``subtar`` block listing its dimension specifications and
one ``element`` block per dimension and attribute, holding that element's value
for every cell (dimensions as logical values).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator

import numpy as np

from .errors import ProtocolError
from .layout import SubTar, subtar_table
from .schema import Explicit, Tar
from .storage import dtype_of, element_type_of

QUERY = 1
RESULT_SCHEMA = 2
RESULT_BLOCK = 3
DATASET_PUSH = 4
ERROR = 5
DONE = 6
KINDS = {QUERY: "QUERY", RESULT_SCHEMA: "RESULT_SCHEMA", RESULT_BLOCK: "RESULT_BLOCK",
         DATASET_PUSH: "DATASET_PUSH", ERROR: "ERROR", DONE: "DONE"}

HEADER = struct.Struct("<IB")
U32 = struct.Struct("<I")
MAX_FRAME = 1 << 30


@dataclass(frozen=True)
class Frame:
    kind: int
    payload: bytes = b""

    @property
    def name(self) -> str:
        return KINDS.get(self.kind, f"UNKNOWN({self.kind})")

    def text(self) -> str:
        return self.payload.decode("utf-8")


def encode_frame(kind: int, payload: bytes = b"") -> bytes:
    if not 0 <= kind <= 255:
        raise ProtocolError(f"frame kind {kind} does not fit in a byte")
    return HEADER.pack(len(payload) + 1, kind) + payload


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO, max_frame: int = MAX_FRAME) -> Frame | None:
    """Read one frame; ``None`` on a clean end of stream.

    Raises :class:`ProtocolError` for a zero or oversized length or a stream
    that ends inside a frame. After such an error the stream cannot be
    resynchronised.
    """
    head = _read_exact(stream, HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise ProtocolError("connection closed inside a frame header")
    length, kind = HEADER.unpack(head)
    if length == 0 or length > max_frame:
        raise ProtocolError(f"invalid frame length {length}")
    payload = _read_exact(stream, length - 1)
    if len(payload) != length - 1:
        raise ProtocolError("connection closed inside a frame payload")
    return Frame(kind, payload)


def iter_frames(stream: BinaryIO, max_frame: int = MAX_FRAME) -> Iterator[Frame]:
    while (frame := read_frame(stream, max_frame)) is not None:
        yield frame


# -- block payloads -----------------------------------------------------------

def encode_block(header: dict, data: bytes = b"") -> bytes:
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return U32.pack(len(raw)) + raw + data


def decode_block(payload: bytes) -> tuple[dict, bytes]:
    if len(payload) < U32.size:
        raise ProtocolError("block payload shorter than its header length")
    (hlen,) = U32.unpack_from(payload)
    end = U32.size + hlen
    if end > len(payload):
        raise ProtocolError("block header runs past the payload")
    try:
        header = json.loads(payload[U32.size:end].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"bad block header: {exc}") from exc
    if not isinstance(header, dict):
        raise ProtocolError("block header must be a JSON object")
    return header, payload[end:]


def schema_payload(tar: Tar) -> bytes:
    elements = []
    for e in tar.elements:
        item = {"name": e.name, "kind": e.kind, "type": e.element_type}
        if e.is_dimension:
            d = e.domain
            item["domain"] = {"explicit": d.dataset.name} if isinstance(d, Explicit) else [d.lower, d.upper, d.spacing]
        elements.append(item)
    body = {"name": tar.name, "type": tar.type.name if tar.type else None, "roles": dict(tar.roles), "elements": elements}
    return json.dumps(body, sort_keys=True).encode("utf-8")


def status_payload(status: str) -> bytes:
    return json.dumps({"status": status}).encode("utf-8")


def subtar_blocks(index: int, sub: SubTar, tar: Tar) -> Iterator[bytes]:
    specs = [{"dim": s.name, "kind": s.kind, "lower": s.lower, "upper": s.upper} for s in sub.specs]
    yield encode_block({"block": "subtar", "index": index, "length": sub.length, "specs": specs})
    names = [e.name for e in tar.elements]
    table = subtar_table(sub, names)
    for name in names:
        col = np.ascontiguousarray(table[name])
        etype = element_type_of(col.dtype)
        yield encode_block({"block": "element", "index": index, "name": name, "type": etype}, col.tobytes())


def push_payload(name: str, element_type: str, data: bytes) -> bytes:
    return encode_block({"name": name, "type": element_type}, data)


@dataclass
class ResultSet:
    """Client-side reassembly of a query answer."""

    schema: dict
    subtars: list[dict]
    status: str | None = None

    def columns(self) -> dict[str, np.ndarray]:
        names = [e["name"] for e in self.schema.get("elements", [])]
        out = {}
        for n in names:
            parts = [s["columns"][n] for s in self.subtars]
            out[n] = np.concatenate(parts) if parts else np.empty(0)
        return out


def assemble(schema: dict, blocks: list[bytes]) -> ResultSet:
    result = ResultSet(schema, [], schema.get("status"))
    for payload in blocks:
        header, data = decode_block(payload)
        if header.get("block") == "subtar":
            result.subtars.append({"specs": header["specs"], "length": header["length"], "columns": {}})
        elif header.get("block") == "element":
            if not result.subtars:
                raise ProtocolError("element block before any subtar block")
            arr = np.frombuffer(data, dtype=dtype_of(header["type"]))
            result.subtars[-1]["columns"][header["name"]] = arr
        else:
            raise ProtocolError(f"unknown block {header.get('block')!r}")
    return result
