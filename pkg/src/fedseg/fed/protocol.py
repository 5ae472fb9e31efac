"""Checksummed binary frames exchanged between the coordinator and sites.

Frame layout (little-endian)::

    magic "FSEG" | version u8 | type u8 | payload_len u32 | payload | crc32 u32

The CRC (IEEE, as computed by zlib.crc32) covers version through payload.
Parameter blobs are f32 arrays prefixed by their element count (u32).
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Union

import numpy as np

MAGIC = b"FSEG"
VERSION = 1
HEADER = struct.Struct("<4sBBI")
MAX_PAYLOAD = 2 ** 28

REGISTER = 0x01
GLOBAL_PARAMS = 0x02
LOCAL_PARAMS = 0x03
DONE = 0x04
SHUTDOWN = 0x05


class ProtocolError(Exception):
    pass


class BadMagicError(ProtocolError):
    pass


class UnsupportedVersionError(ProtocolError):
    pass


class UnknownTypeError(ProtocolError):
    pass


class LengthOverflowError(ProtocolError):
    pass


class ChecksumError(ProtocolError):
    pass


class TruncatedFrameError(ProtocolError):
    pass


class MalformedPayloadError(ProtocolError):
    pass


def _f32(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32).ravel()
    arr.flags.writeable = False
    return arr


def _same(a: np.ndarray, b: np.ndarray) -> bool:
    return a.tobytes() == b.tobytes()


@dataclass(frozen=True)
class Register:
    site_id: int
    n_drl: int
    n_rm: int


@dataclass(frozen=True, eq=False)
class GlobalParams:
    round: int
    drl: np.ndarray = field(repr=False)
    rm: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "drl", _f32(self.drl))
        object.__setattr__(self, "rm", _f32(self.rm))

    def __eq__(self, other):
        return (isinstance(other, GlobalParams) and self.round == other.round
                and _same(self.drl, other.drl) and _same(self.rm, other.rm))


@dataclass(frozen=True, eq=False)
class LocalParams:
    site_id: int
    round: int
    train_loss: float
    drl: np.ndarray = field(repr=False)
    rm: np.ndarray = field(repr=False)

    def __post_init__(self):
        # the wire carries the loss as f32
        object.__setattr__(self, "train_loss", float(np.float32(self.train_loss)))
        object.__setattr__(self, "drl", _f32(self.drl))
        object.__setattr__(self, "rm", _f32(self.rm))

    def __eq__(self, other):
        return (isinstance(other, LocalParams) and self.site_id == other.site_id
                and self.round == other.round
                and np.float32(self.train_loss).tobytes() == np.float32(other.train_loss).tobytes()
                and _same(self.drl, other.drl) and _same(self.rm, other.rm))


@dataclass(frozen=True)
class Done:
    final_round: int


@dataclass(frozen=True)
class Shutdown:
    pass


Message = Union[Register, GlobalParams, LocalParams, Done, Shutdown]


def _blob(arr: np.ndarray) -> bytes:
    return struct.pack("<I", arr.size) + arr.astype("<f4").tobytes()


def _payload(msg: Message) -> tuple[int, bytes]:
    if isinstance(msg, Register):
        return REGISTER, struct.pack("<III", msg.site_id, msg.n_drl, msg.n_rm)
    if isinstance(msg, GlobalParams):
        return GLOBAL_PARAMS, struct.pack("<I", msg.round) + _blob(msg.drl) + _blob(msg.rm)
    if isinstance(msg, LocalParams):
        head = struct.pack("<IIf", msg.site_id, msg.round, msg.train_loss)
        return LOCAL_PARAMS, head + _blob(msg.drl) + _blob(msg.rm)
    if isinstance(msg, Done):
        return DONE, struct.pack("<I", msg.final_round)
    if isinstance(msg, Shutdown):
        return SHUTDOWN, b""
    raise TypeError(f"not a protocol message: {msg!r}")


def encode_message(msg: Message) -> bytes:
    mtype, payload = _payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise LengthOverflowError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    body = HEADER.pack(MAGIC, VERSION, mtype, len(payload)) + payload
    return body + struct.pack("<I", zlib.crc32(body[4:]))


def parse_header(header: bytes) -> tuple[int, int]:
    """Validate a 10-byte header; returns (type, payload_len)."""
    if len(header) < HEADER.size:
        raise TruncatedFrameError("frame shorter than its header")
    magic, version, mtype, length = HEADER.unpack(header[:HEADER.size])
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported protocol version {version}")
    if mtype not in (REGISTER, GLOBAL_PARAMS, LOCAL_PARAMS, DONE, SHUTDOWN):
        raise UnknownTypeError(f"unknown message type 0x{mtype:02x}")
    if length > MAX_PAYLOAD:
        raise LengthOverflowError(f"payload length {length} exceeds {MAX_PAYLOAD}")
    return mtype, length


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def blob(self) -> np.ndarray:
        n = self.u32()
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise MalformedPayloadError("payload ends early")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise MalformedPayloadError(f"{len(self.buf) - self.pos} trailing payload bytes")


def _decode_payload(mtype: int, payload: bytes) -> Message:
    r = _Reader(payload)
    if mtype == REGISTER:
        msg = Register(r.u32(), r.u32(), r.u32())
    elif mtype == GLOBAL_PARAMS:
        msg = GlobalParams(r.u32(), r.blob(), r.blob())
    elif mtype == LOCAL_PARAMS:
        site, rnd, loss = r.u32(), r.u32(), r.f32()
        msg = LocalParams(site, rnd, loss, r.blob(), r.blob())
    elif mtype == DONE:
        msg = Done(r.u32())
    else:
        msg = Shutdown()
    r.finish()
    return msg


def _check_body(header: bytes, payload: bytes, crc_bytes: bytes) -> None:
    (crc,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(header[4:] + payload) != crc:
        raise ChecksumError("frame checksum mismatch")


def decode_message(frame: bytes) -> Message:
    frame = bytes(frame)
    mtype, length = parse_header(frame)
    end = HEADER.size + length
    if len(frame) < end + 4:
        raise TruncatedFrameError(f"frame has {len(frame)} bytes, header implies {end + 4}")
    if len(frame) > end + 4:
        raise MalformedPayloadError("trailing bytes after frame")
    _check_body(frame[:HEADER.size], frame[HEADER.size:end], frame[end:end + 4])
    return _decode_payload(mtype, frame[HEADER.size:end])


class ConnectionClosed(ProtocolError):
    pass


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise ConnectionClosed("peer closed the connection")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_message(sock) -> Message:
    """Read one frame from a connected stream socket."""
    header = _recv_exact(sock, HEADER.size)
    mtype, length = parse_header(header)
    rest = _recv_exact(sock, length + 4)
    _check_body(header, rest[:length], rest[length:])
    return _decode_payload(mtype, rest[:length])


def send_message(sock, msg: Message) -> None:
    sock.sendall(encode_message(msg))
