"""Length-framed binary messages exchanged between peers.

Frame: u32 length (type byte + payload) | u8 type | payload.  All integers
are big-endian.  See docs/wire.md for the byte-level description.
"""

from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass
from typing import Sequence

from ..errors import ProtocolError

PROTOCOL_VERSION = 1
MAX_FRAME = 2 * 1024 * 1024
DEFAULT_PORT = 30303

_LEN = struct.Struct(">I")
_HELLO = struct.Struct(">HI32s32sQH")


class MsgType(enum.IntEnum):
    HELLO = 1
    INV = 2
    GET_BLOCKS = 3
    BLOCKS = 4
    TX = 5
    GET_DATA = 6
    DATA = 7
    PING = 8
    PONG = 9


class InvKind(enum.IntEnum):
    TX = 1
    BLOCK = 2
    OBJECT = 3


def encode_frame(mtype: MsgType, payload: bytes = b"") -> bytes:
    if len(payload) + 1 > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload) + 1} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(payload) + 1) + bytes([mtype]) + payload


class FrameDecoder:
    """Incremental decoder; raises ProtocolError on any framing violation."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[MsgType, bytes]]:
        self._buf += data
        out = []
        while len(self._buf) >= _LEN.size:
            (n,) = _LEN.unpack_from(self._buf, 0)
            if n == 0 or n > MAX_FRAME:
                raise ProtocolError(f"bad frame length {n}")
            if len(self._buf) < _LEN.size + n:
                break
            raw_type = self._buf[_LEN.size]
            payload = bytes(self._buf[_LEN.size + 1 : _LEN.size + n])
            del self._buf[: _LEN.size + n]
            try:
                mtype = MsgType(raw_type)
            except ValueError:
                raise ProtocolError(f"unknown message type {raw_type}") from None
            out.append((mtype, payload))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 16))
        if not chunk:
            raise ConnectionError("connection closed by peer")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[MsgType, bytes]:
    (n,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    if n == 0 or n > MAX_FRAME:
        raise ProtocolError(f"bad frame length {n}")
    body = _recv_exact(sock, n)
    try:
        return MsgType(body[0]), body[1:]
    except ValueError:
        raise ProtocolError(f"unknown message type {body[0]}") from None


# -- payloads -------------------------------------------------------------------


@dataclass(frozen=True)
class Hello:
    version: int
    network_id: int
    genesis_hash: bytes
    head_hash: bytes
    head_height: int
    listen_port: int

    def encode(self) -> bytes:
        return _HELLO.pack(
            self.version, self.network_id, self.genesis_hash, self.head_hash,
            self.head_height, self.listen_port,
        )

    @classmethod
    def decode(cls, payload: bytes) -> Hello:
        if len(payload) != _HELLO.size:
            raise ProtocolError("HELLO payload has wrong size")
        return cls(*_HELLO.unpack(payload))


class _Reader:
    def __init__(self, payload: bytes):
        self.buf = payload
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ProtocolError("truncated payload")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def rest(self) -> bytes:
        out = self.buf[self.pos :]
        self.pos = len(self.buf)
        return out

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise ProtocolError("trailing bytes in payload")


def encode_inv(kind: InvKind, ids: Sequence[bytes]) -> bytes:
    if any(len(i) != 32 for i in ids):
        raise ProtocolError("INV ids must be 32 bytes")
    return struct.pack(">BH", kind, len(ids)) + b"".join(ids)


def decode_inv(payload: bytes) -> tuple[InvKind, list[bytes]]:
    r = _Reader(payload)
    try:
        kind = InvKind(r.u8())
    except ValueError:
        raise ProtocolError("unknown INV kind") from None
    ids = [r.take(32) for _ in range(r.u16())]
    r.done()
    return kind, ids


def encode_get_data(kind: InvKind, ids: Sequence[bytes]) -> bytes:
    parts = [struct.pack(">BH", kind, len(ids))]
    for i in ids:
        parts += [struct.pack(">H", len(i)), i]
    return b"".join(parts)


def decode_get_data(payload: bytes) -> tuple[InvKind, list[bytes]]:
    r = _Reader(payload)
    try:
        kind = InvKind(r.u8())
    except ValueError:
        raise ProtocolError("unknown GET_DATA kind") from None
    ids = [r.take(r.u16()) for _ in range(r.u16())]
    r.done()
    return kind, ids


def encode_data(item_id: bytes, found: bool, object_kind: int = 0, body: bytes = b"") -> bytes:
    return struct.pack(">BBH", int(found), object_kind, len(item_id)) + item_id + body


def decode_data(payload: bytes) -> tuple[bytes, bool, int, bytes]:
    r = _Reader(payload)
    found = r.u8()
    if found not in (0, 1):
        raise ProtocolError("bad DATA found flag")
    object_kind = r.u8()
    item_id = r.take(r.u16())
    return item_id, bool(found), object_kind, r.rest()


def encode_get_blocks(locator: Sequence[bytes]) -> bytes:
    return struct.pack(">H", len(locator)) + b"".join(locator)


def decode_get_blocks(payload: bytes) -> list[bytes]:
    r = _Reader(payload)
    hashes = [r.take(32) for _ in range(r.u16())]
    r.done()
    return hashes


def encode_blocks(raw_blocks: Sequence[bytes]) -> bytes:
    parts = [struct.pack(">H", len(raw_blocks))]
    for b in raw_blocks:
        parts += [struct.pack(">I", len(b)), b]
    return b"".join(parts)


def decode_blocks(payload: bytes) -> list[bytes]:
    r = _Reader(payload)
    out = [r.take(r.u32()) for _ in range(r.u16())]
    r.done()
    return out


def encode_ping(nonce: int) -> bytes:
    return struct.pack(">Q", nonce)


def decode_ping(payload: bytes) -> int:
    r = _Reader(payload)
    n = r.u64()
    r.done()
    return n
