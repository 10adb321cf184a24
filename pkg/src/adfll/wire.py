"""Canonical byte formats: ERB serialization, checkpoints, message framing.

The ERB layout is fixed and little-endian so content ids are identical on
every platform; the same bytes are the on-disk `.erb` file format and the
payload of network messages. Decoders are total: malformed input raises a
typed WireError, never anything else.

ERB layout::

    magic "ADFL" | version u16 | agent_id (u16 len + utf8)
    | task_id (u16 len + utf8) | round u32 | created_seq u64
    | capacity u32 | seen_count u64 | patch_len u16 | entry_count u32
    | entries...

    entry: state (patch_len u8) | action u8 | reward f64 | next_state
    (patch_len u8) | terminal u8

Message frame::

    length u32 (counts type byte + payload) | type u8 | payload
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import IntEnum

from .replay import ErbMeta, ExperienceReplayBuffer, Transition

ERB_MAGIC = b"ADFL"
ERB_VERSION = 1
MAX_FRAME_PAYLOAD = 64 * 1024 * 1024  # includes the type byte


class WireError(ValueError):
    """Base class for every decode failure."""


class TruncatedError(WireError):
    pass


class BadMagicError(WireError):
    pass


class VersionError(WireError):
    pass


class FormatError(WireError):
    """Count/length inconsistency or an out-of-range field."""


class OversizeFrameError(WireError):
    pass


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedError(f"need {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def utf8(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"bad utf-8 string: {e}") from None

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError("string field too long")
    return struct.pack("<H", len(raw)) + raw


def serialize_erb(erb: ExperienceReplayBuffer) -> bytes:
    patch_len = len(erb.entries[0].state) if erb.entries else 0
    parts = [
        ERB_MAGIC,
        struct.pack("<H", ERB_VERSION),
        _pack_str(erb.meta.agent_id),
        _pack_str(erb.meta.task_id),
        struct.pack(
            "<IQIQHI",
            erb.meta.round,
            erb.meta.created_seq,
            erb.capacity,
            erb.seen_count,
            patch_len,
            len(erb.entries),
        ),
    ]
    for t in erb.entries:
        if len(t.state) != patch_len:
            raise FormatError("entries with differing patch lengths")
        parts.append(t.state)
        parts.append(struct.pack("<Bd", t.action, t.reward))
        parts.append(t.next_state)
        parts.append(b"\x01" if t.terminal else b"\x00")
    return b"".join(parts)


def deserialize_erb(data: bytes) -> ExperienceReplayBuffer:
    r = _Reader(data)
    if r.take(4) != ERB_MAGIC:
        raise BadMagicError("not an ERB byte string")
    version = r.u16()
    if version != ERB_VERSION:
        raise VersionError(f"unsupported ERB version {version}")
    agent_id = r.utf8()
    task_id = r.utf8()
    round_ = r.u32()
    created_seq = r.u64()
    capacity = r.u32()
    seen_count = r.u64()
    patch_len = r.u16()
    count = r.u32()
    if capacity < 1:
        raise FormatError("capacity must be positive")
    if count > capacity:
        raise FormatError(f"entry count {count} exceeds capacity {capacity}")
    if seen_count < count:
        raise FormatError("seen_count below entry count")
    entries = []
    for i in range(count):
        state = r.take(patch_len)
        action = r.u8()
        reward = r.f64()
        next_state = r.take(patch_len)
        term = r.u8()
        if action > 5:
            raise FormatError(f"entry {i}: action code {action} out of range")
        if term > 1:
            raise FormatError(f"entry {i}: terminal byte {term}")
        if not math.isfinite(reward):
            raise FormatError(f"entry {i}: non-finite reward")
        entries.append(Transition(state, action, reward, next_state, bool(term)))
    if not r.done():
        raise FormatError(f"{len(data) - r.pos} trailing bytes")
    erb = ExperienceReplayBuffer(
        meta=ErbMeta(agent_id, task_id, round_, created_seq),
        capacity=capacity,
        entries=entries,
        seen_count=seen_count,
    )
    return erb.freeze()


def write_erb_file(path, erb: ExperienceReplayBuffer) -> None:
    with open(path, "wb") as f:
        f.write(serialize_erb(erb))


def read_erb_file(path) -> ExperienceReplayBuffer:
    with open(path, "rb") as f:
        return deserialize_erb(f.read())


class MsgType(IntEnum):
    UPLOAD = 1
    DOWNLOAD_REQ = 2
    DOWNLOAD_RESP = 3
    SYNC_DIGEST = 4
    SYNC_PULL = 5
    SYNC_RESP = 6
    ACK = 7
    ERR = 8


@dataclass(frozen=True)
class Message:
    type: MsgType
    payload: bytes = b""


def encode_message(m: Message) -> bytes:
    length = 1 + len(m.payload)
    if length > MAX_FRAME_PAYLOAD:
        raise OversizeFrameError(f"frame of {length} bytes exceeds cap")
    return struct.pack("<IB", length, int(m.type)) + m.payload


def decode_message(data: bytes) -> Message:
    """Decode one complete frame; the declared length must cover the input."""
    if len(data) < 5:
        raise TruncatedError("frame shorter than header")
    length = struct.unpack("<I", data[:4])[0]
    if length > MAX_FRAME_PAYLOAD:
        raise OversizeFrameError(f"declared frame length {length} exceeds cap")
    if length < 1:
        raise FormatError("frame length must cover the type byte")
    if 4 + length != len(data):
        raise FormatError(f"declared {length} bytes, got {len(data) - 4}")
    type_byte = data[4]
    try:
        mtype = MsgType(type_byte)
    except ValueError:
        raise FormatError(f"unknown message type {type_byte}") from None
    return Message(mtype, data[5:])


def read_frame_header(header: bytes) -> int:
    """Validate a 4-byte length prefix before any payload allocation."""
    if len(header) != 4:
        raise TruncatedError("incomplete frame header")
    length = struct.unpack("<I", header)[0]
    if length > MAX_FRAME_PAYLOAD:
        raise OversizeFrameError(f"declared frame length {length} exceeds cap")
    if length < 1:
        raise FormatError("frame length must cover the type byte")
    return length


# Payload codecs for the hub/agent protocol.


def encode_id_set(ids) -> bytes:
    ids = sorted(ids)
    return struct.pack("<I", len(ids)) + b"".join(struct.pack("<Q", i) for i in ids)


def decode_id_set(data: bytes) -> list[int]:
    r = _Reader(data)
    n = r.u32()
    out = [r.u64() for _ in range(n)]
    if not r.done():
        raise FormatError("trailing bytes after id set")
    return out


def encode_erb_list(blobs: list[bytes]) -> bytes:
    parts = [struct.pack("<I", len(blobs))]
    for b in blobs:
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    return b"".join(parts)


def decode_erb_list(data: bytes) -> list[bytes]:
    r = _Reader(data)
    n = r.u32()
    out = [r.take(r.u32()) for _ in range(n)]
    if not r.done():
        raise FormatError("trailing bytes after ERB list")
    return out


def encode_download_req(agent_id: str, exclude_self: bool) -> bytes:
    return _pack_str(agent_id) + (b"\x01" if exclude_self else b"\x00")


def decode_download_req(data: bytes) -> tuple[str, bool]:
    r = _Reader(data)
    agent_id = r.utf8()
    flag = r.u8()
    if flag > 1 or not r.done():
        raise FormatError("malformed download request")
    return agent_id, bool(flag)
