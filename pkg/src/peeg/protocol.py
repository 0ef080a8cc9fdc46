"""Wire protocol for live streaming and control.

Every message is a length-prefixed frame:

    magic "PEEG" | version u8 | type u8 | length u32 LE | body

JSON bodies carry HELLO / METRICS / CMD / ACK / ERR; DATA is binary:

    seq u64 | epoch u32 | t0_ns u64 | dropped_before u64 | flags u8 | n u32 |
    payload 8*n values (f32 LE microvolts, or i32 LE raw codes when flags&1)

The same framing travels over raw TCP and inside binary WebSocket messages;
docs/protocol.md fixes the byte layout. Decoding is defensive: malformed
input raises a ProtocolError subclass, never anything else.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .ads1299 import N_CHANNELS

MAGIC = b"PEEG"
PROTO_VERSION = 1
HEADER_LEN = 10  # magic + version + type + length
MAX_BODY = 16 * 1024 * 1024

TYPE_HELLO = 1
TYPE_DATA = 2
TYPE_METRICS = 3
TYPE_CMD = 4
TYPE_ACK = 5
TYPE_ERR = 6

FLAG_RAW_CODES = 0x01

CMD_OPS = ("START", "STOP", "RREG", "WREG", "ANNOTATE", "SET_SCENARIO")

ERR_INVALID_REG = "INVALID_REG"
ERR_UNSUPPORTED = "UNSUPPORTED"
ERR_NOT_RUNNING = "NOT_RUNNING"
ERR_UNAUTHORIZED = "UNAUTHORIZED"
ERR_BAD_MESSAGE = "BAD_MESSAGE"


class ProtocolError(Exception):
    pass


class BadMagic(ProtocolError):
    pass


class BadVersion(ProtocolError):
    pass


class UnknownType(ProtocolError):
    pass


class LengthOverflow(ProtocolError):
    pass


class BadBody(ProtocolError):
    pass


@dataclass(frozen=True)
class Hello:
    fs: int
    channel_labels: tuple[str, ...]
    gains: tuple[int, ...]
    vref: float
    server: str = "peeg"
    auth_required: bool = False

    def body(self) -> bytes:
        return json.dumps(
            {
                "fs": self.fs,
                "channel_labels": list(self.channel_labels),
                "gains": list(self.gains),
                "vref": self.vref,
                "server": self.server,
                "auth_required": self.auth_required,
            }
        ).encode()


@dataclass(eq=False)
class Data:
    seq: int
    epoch: int
    t0_ns: int
    dropped_before: int
    payload: np.ndarray  # (8, n) float32 uV, or int32 codes when raw
    raw: bool = False

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Data)
            and (self.seq, self.epoch, self.t0_ns, self.dropped_before, self.raw)
            == (other.seq, other.epoch, other.t0_ns, other.dropped_before, other.raw)
            and self.payload.dtype == other.payload.dtype
            and np.array_equal(self.payload, other.payload)
        )

    def body(self) -> bytes:
        dtype = "<i4" if self.raw else "<f4"
        payload = np.ascontiguousarray(self.payload, dtype=dtype)
        if payload.shape[0] != N_CHANNELS:
            raise BadBody(f"payload must have {N_CHANNELS} channels")
        head = struct.pack(
            "<QIQQBI",
            self.seq,
            self.epoch,
            self.t0_ns,
            self.dropped_before,
            FLAG_RAW_CODES if self.raw else 0,
            payload.shape[1],
        )
        return head + payload.tobytes()


@dataclass(frozen=True)
class Metrics:
    payload: dict

    def body(self) -> bytes:
        return json.dumps(self.payload).encode()


@dataclass(frozen=True)
class Cmd:
    cmd_id: int
    op: str
    args: dict = field(default_factory=dict)

    def body(self) -> bytes:
        return json.dumps({"id": self.cmd_id, "op": self.op, "args": self.args}).encode()


@dataclass(frozen=True)
class Ack:
    cmd_id: int
    result: dict = field(default_factory=dict)

    def body(self) -> bytes:
        return json.dumps({"id": self.cmd_id, "result": self.result}).encode()


@dataclass(frozen=True)
class Err:
    code: str
    text: str
    cmd_id: Optional[int] = None

    def body(self) -> bytes:
        doc = {"code": self.code, "text": self.text}
        if self.cmd_id is not None:
            doc["id"] = self.cmd_id
        return json.dumps(doc).encode()


Message = Union[Hello, Data, Metrics, Cmd, Ack, Err]

_TYPE_OF = {
    Hello: TYPE_HELLO,
    Data: TYPE_DATA,
    Metrics: TYPE_METRICS,
    Cmd: TYPE_CMD,
    Ack: TYPE_ACK,
    Err: TYPE_ERR,
}


def encode_message(msg: Message) -> bytes:
    body = msg.body()
    if len(body) > MAX_BODY:
        raise LengthOverflow(f"body of {len(body)} bytes exceeds {MAX_BODY}")
    return MAGIC + struct.pack("<BBI", PROTO_VERSION, _TYPE_OF[type(msg)], len(body)) + body


def _json_body(body: bytes) -> dict:
    try:
        doc = json.loads(body.decode())
    except (UnicodeDecodeError, ValueError) as exc:
        raise BadBody(f"unparseable JSON body: {exc}") from exc
    if not isinstance(doc, dict):
        raise BadBody("JSON body must be an object")
    return doc


def _decode_body(mtype: int, body: bytes) -> Message:
    if mtype == TYPE_DATA:
        head_len = struct.calcsize("<QIQQBI")
        if len(body) < head_len:
            raise BadBody("data body shorter than its fixed header")
        seq, epoch, t0_ns, dropped, flags, n = struct.unpack_from("<QIQQBI", body)
        raw = bool(flags & FLAG_RAW_CODES)
        dtype = "<i4" if raw else "<f4"
        expect = head_len + 4 * N_CHANNELS * n
        if len(body) != expect:
            raise BadBody(f"data body is {len(body)} bytes, expected {expect}")
        payload = np.frombuffer(body, dtype=dtype, offset=head_len).reshape(N_CHANNELS, n)
        return Data(seq, epoch, t0_ns, dropped, payload.copy(), raw=raw)

    doc = _json_body(body)
    try:
        if mtype == TYPE_HELLO:
            return Hello(
                fs=int(doc["fs"]),
                channel_labels=tuple(doc["channel_labels"]),
                gains=tuple(int(g) for g in doc["gains"]),
                vref=float(doc["vref"]),
                server=str(doc.get("server", "peeg")),
                auth_required=bool(doc.get("auth_required", False)),
            )
        if mtype == TYPE_METRICS:
            return Metrics(doc)
        if mtype == TYPE_CMD:
            op = str(doc["op"])
            if op not in CMD_OPS:
                raise BadBody(f"unknown command op {op!r}")
            return Cmd(int(doc["id"]), op, dict(doc.get("args", {})))
        if mtype == TYPE_ACK:
            return Ack(int(doc["id"]), dict(doc.get("result", {})))
        if mtype == TYPE_ERR:
            cmd_id = doc.get("id")
            return Err(
                str(doc["code"]), str(doc.get("text", "")),
                int(cmd_id) if cmd_id is not None else None,
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise BadBody(f"bad {mtype} body: {exc}") from exc
    raise UnknownType(f"message type {mtype}")


def decode_message(buf: bytes) -> tuple[Message, int]:
    """Decode one frame from the head of buf; returns (message, bytes consumed)."""
    if len(buf) < HEADER_LEN:
        raise BadBody("incomplete header")
    if buf[:4] != MAGIC:
        raise BadMagic(f"bad magic {buf[:4]!r}")
    version, mtype, length = struct.unpack_from("<BBI", buf, 4)
    if version != PROTO_VERSION:
        raise BadVersion(f"protocol version {version}, expected {PROTO_VERSION}")
    if length > MAX_BODY:
        raise LengthOverflow(f"declared body of {length} bytes exceeds {MAX_BODY}")
    if mtype not in _TYPE_OF.values():
        raise UnknownType(f"message type {mtype}")
    if len(buf) < HEADER_LEN + length:
        raise BadBody("incomplete body")
    return _decode_body(mtype, buf[HEADER_LEN : HEADER_LEN + length]), HEADER_LEN + length


class FrameDecoder:
    """Incremental stream decoder for the TCP transport.

    feed() buffers bytes and returns complete messages in order, with decode
    problems interleaved as ProtocolError values rather than raised, so no
    preceding message is lost. Framing errors that make resync impossible
    (bad magic, bad version, length overflow) poison the decoder: they are
    returned once and any further feed() raises.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self._dead: Optional[ProtocolError] = None

    def feed(self, chunk: bytes) -> list[Union[Message, ProtocolError]]:
        if self._dead is not None:
            raise self._dead
        self._buf.extend(chunk)
        out: list[Union[Message, ProtocolError]] = []
        while True:
            if len(self._buf) < HEADER_LEN:
                return out
            if bytes(self._buf[:4]) != MAGIC:
                self._dead = BadMagic(f"bad magic {bytes(self._buf[:4])!r}")
                out.append(self._dead)
                return out
            version, mtype, length = struct.unpack_from("<BBI", self._buf, 4)
            if version != PROTO_VERSION:
                self._dead = BadVersion(f"protocol version {version}")
                out.append(self._dead)
                return out
            if length > MAX_BODY:
                self._dead = LengthOverflow(f"declared body of {length} bytes")
                out.append(self._dead)
                return out
            if len(self._buf) < HEADER_LEN + length:
                return out
            frame = bytes(self._buf[: HEADER_LEN + length])
            del self._buf[: HEADER_LEN + length]
            try:
                out.append(_decode_body(mtype, frame[HEADER_LEN:]))
            except ProtocolError as exc:
                out.append(exc)  # frame consumed; stream stays usable
