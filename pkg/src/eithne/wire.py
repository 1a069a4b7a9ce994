"""Framed little-endian message format and the byte-stream transports under it.

Every frame is a fixed 16-byte header followed by ``count * 4`` payload
bytes::

    offset  size  field
    0       2     magic 0xE1 0x7E
    2       1     version
    3       1     msg_type
    4       2     target_id
    6       2     object_id
    8       1     element_type (0 when the frame carries no data)
    9       1     reserved (0)
    10      4     count
    14      2     error_code

Transports only promise a reliable, ordered, duplex byte stream; the frame
boundaries are recovered by :func:`recv_message`.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

from eithne.errors import (
    BadMagicError,
    ConnectionClosedError,
    EncodeError,
    MalformedFrameError,
    TransportError,
    TransportTimeoutError,
    TruncatedFrameError,
    UnknownMessageTypeError,
)

MAGIC = b"\xe1\x7e"
VERSION = 1
HEADER = struct.Struct("<2sBBHHBBIH")
HEADER_SIZE = HEADER.size  # 16
assert HEADER_SIZE == 16

U16_MAX = 0xFFFF
U32_MAX = 0xFFFFFFFF


class ElementType(IntEnum):
    INT32 = 1
    FLOAT32 = 2

    @property
    def numpy_dtype(self) -> str:
        return "<i4" if self is ElementType.INT32 else "<f4"


class MsgType(IntEnum):
    DATA_SEND = 0x01
    DATA_REQUEST = 0x02
    DATA_RESPONSE = 0x03
    EXECUTE = 0x04
    EXECUTE_DONE = 0x05
    PING = 0x06
    PONG = 0x07
    ERROR = 0x08
    # session control
    STOP = 0x09
    HANDSHAKE = 0x0A  # request: no payload; reply: INT32 table signature
    LOAD = 0x0B  # INT32 program descriptor; reply: ACK or ERROR
    ACK = 0x0C


# Frames that carry a typed payload. Everything else is a control frame.
DATA_TYPES = frozenset({MsgType.DATA_SEND, MsgType.DATA_RESPONSE, MsgType.HANDSHAKE, MsgType.LOAD})


class ErrorCode(IntEnum):
    UNKNOWN_VARIABLE = 1
    UNKNOWN_KERNEL = 2
    PAYLOAD_SIZE = 3
    MEMORY_BUDGET = 4
    KERNEL_FAULT = 5
    UNEXPECTED_MESSAGE = 6
    UNKNOWN_PROGRAM = 7
    TYPE_MISMATCH = 8


@dataclass(frozen=True)
class Message:
    msg_type: MsgType
    target_id: int = 0
    object_id: int = 0
    element_type: Optional[ElementType] = None
    count: int = 0
    payload: bytes = b""
    error_code: int = 0
    version: int = VERSION

    @property
    def carries_data(self) -> bool:
        return self.msg_type in DATA_TYPES

    def validate(self) -> None:
        if not 0 <= self.version <= 0xFF:
            raise EncodeError(f"version {self.version} does not fit in u8")
        for name in ("target_id", "object_id", "error_code"):
            value = getattr(self, name)
            if not 0 <= value <= U16_MAX:
                raise EncodeError(f"{name}={value} does not fit in u16")
        if not 0 <= self.count <= U32_MAX:
            raise EncodeError(f"count={self.count} does not fit in u32")
        if self.carries_data:
            if self.element_type is None and self.count:
                raise EncodeError(f"{self.msg_type.name} with a payload requires an element type")
            if len(self.payload) != 4 * self.count:
                raise EncodeError(
                    f"payload is {len(self.payload)} B but count={self.count} needs {4 * self.count} B"
                )
        else:
            if self.count or self.payload:
                raise EncodeError(f"control message {self.msg_type.name} must not carry a payload")
            if self.element_type is not None:
                raise EncodeError(f"control message {self.msg_type.name} has no element type")
        if self.error_code and self.msg_type is not MsgType.ERROR:
            raise EncodeError("error_code is only valid on ERROR frames")


def data_message(
    msg_type: MsgType, target_id: int, object_id: int, element_type: ElementType, payload: bytes
) -> Message:
    if len(payload) % 4:
        raise EncodeError(f"payload length {len(payload)} is not a multiple of 4")
    return Message(msg_type, target_id, object_id, ElementType(element_type), len(payload) // 4, bytes(payload))


def encode_message(m: Message) -> bytes:
    m.validate()
    header = HEADER.pack(
        MAGIC,
        m.version,
        int(m.msg_type),
        m.target_id,
        m.object_id,
        int(m.element_type) if m.element_type is not None else 0,
        0,
        m.count,
        m.error_code,
    )
    return header + m.payload


def _parse_header(b) -> tuple:
    magic, version, mtype, target, obj, etype, _reserved, count, err = HEADER.unpack_from(b, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {bytes(magic).hex()}")
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise UnknownMessageTypeError(f"unknown msg_type 0x{mtype:02x}") from None
    if mtype in DATA_TYPES and (etype or count):
        try:
            etype = ElementType(etype)
        except ValueError:
            raise UnknownMessageTypeError(f"unknown element_type {etype}") from None
    else:
        etype = None
    return version, mtype, target, obj, etype, count, err


def payload_length(header: bytes) -> int:
    """Number of payload bytes that follow ``header``."""
    _, mtype, _, _, _, count, _ = _parse_header(header)
    return 4 * count if mtype in DATA_TYPES else 0


def decode_message(b: bytes) -> tuple[Message, int]:
    """Decode one frame from the front of ``b``; return it and the bytes consumed."""
    if len(b) >= 2 and bytes(b[:2]) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(b[:2]).hex()}")
    if len(b) < HEADER_SIZE:
        raise TruncatedFrameError(f"need {HEADER_SIZE} header bytes, have {len(b)}")
    version, mtype, target, obj, etype, count, err = _parse_header(b)
    if mtype not in DATA_TYPES and count:
        raise MalformedFrameError(f"control frame {mtype.name} declares count={count}")
    size = HEADER_SIZE + (4 * count if mtype in DATA_TYPES else 0)
    if len(b) < size:
        raise TruncatedFrameError(f"frame needs {size} B, have {len(b)}")
    payload = bytes(b[HEADER_SIZE:size])
    return Message(mtype, target, obj, etype, count, payload, err, version), size


def decode_stream(b: bytes) -> list[Message]:
    """Decode back-to-back frames; the buffer must end on a frame boundary."""
    out = []
    pos = 0
    view = memoryview(b)
    while pos < len(b):
        m, used = decode_message(view[pos:])
        out.append(m)
        pos += used
    return out


# -- transports ---------------------------------------------------------------


class TransportEndpoint:
    """Duplex byte stream. Subclasses implement ``send_all``/``recv_exactly``."""

    def send_all(self, data: bytes) -> None:
        raise NotImplementedError

    def recv_exactly(self, n: int, timeout: Optional[float] = None) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    @property
    def closed(self) -> bool:
        raise NotImplementedError

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _Pipe:
    """One direction of an in-process byte stream."""

    def __init__(self):
        self._buf = bytearray()
        self._cond = threading.Condition()
        self.closed = False

    def write(self, data: bytes) -> None:
        with self._cond:
            if self.closed:
                raise ConnectionClosedError("write on closed channel")
            self._buf += data
            self._cond.notify_all()

    def read(self, n: int, timeout: Optional[float]) -> bytes:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while len(self._buf) < n:
                if self.closed:
                    got = len(self._buf)
                    self._buf.clear()
                    raise ConnectionClosedError(f"channel closed after {got} of {n} B", got)
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TransportTimeoutError(f"timed out waiting for {n} B", len(self._buf))
                self._cond.wait(remaining)
            data = bytes(self._buf[:n])
            del self._buf[:n]
            return data

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


class ChannelEndpoint(TransportEndpoint):
    """One end of an in-process duplex channel (see :func:`channel_pair`)."""

    def __init__(self, rx: _Pipe, tx: _Pipe):
        self._rx = rx
        self._tx = tx

    def send_all(self, data: bytes) -> None:
        self._tx.write(data)

    def recv_exactly(self, n: int, timeout: Optional[float] = None) -> bytes:
        return self._rx.read(n, timeout)

    def close(self) -> None:
        self._tx.close()
        self._rx.close()

    @property
    def closed(self) -> bool:
        return self._tx.closed


def channel_pair() -> tuple[ChannelEndpoint, ChannelEndpoint]:
    a_to_b, b_to_a = _Pipe(), _Pipe()
    return ChannelEndpoint(b_to_a, a_to_b), ChannelEndpoint(a_to_b, b_to_a)


class LoopbackEndpoint(ChannelEndpoint):
    """Everything sent is received back by the same endpoint."""

    def __init__(self):
        pipe = _Pipe()
        super().__init__(pipe, pipe)


class TcpEndpoint(TransportEndpoint):
    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._closed = False

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 10.0) -> "TcpEndpoint":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        sock.settimeout(None)
        return cls(sock)

    def send_all(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ConnectionClosedError(f"send failed: {exc}") from exc

    def recv_exactly(self, n: int, timeout: Optional[float] = None) -> bytes:
        buf = bytearray(n)
        view = memoryview(buf)
        got = 0
        deadline = None if timeout is None else time.monotonic() + timeout
        try:
            while got < n:
                if deadline is not None:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise TransportTimeoutError(f"timed out waiting for {n} B", got)
                    self._sock.settimeout(remaining)
                else:
                    self._sock.settimeout(None)
                try:
                    k = self._sock.recv_into(view[got:], n - got)
                except socket.timeout:
                    raise TransportTimeoutError(f"timed out waiting for {n} B", got) from None
                if k == 0:
                    raise ConnectionClosedError(f"connection closed after {got} of {n} B", got)
                got += k
        except OSError as exc:
            if isinstance(exc, TransportError):
                raise
            raise ConnectionClosedError(f"recv failed: {exc}", got) from exc
        return bytes(buf)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    @property
    def closed(self) -> bool:
        return self._closed


def tcp_pair(host: str = "127.0.0.1") -> tuple[TcpEndpoint, TcpEndpoint]:
    """A connected (client, server) pair over a fresh localhost socket."""
    with socket.create_server((host, 0)) as srv:
        port = srv.getsockname()[1]
        client = socket.create_connection((host, port))
        server, _ = srv.accept()
    return TcpEndpoint(client), TcpEndpoint(server)


# -- framed send/recv ----------------------------------------------------------


def send_message(ep: TransportEndpoint, m: Message) -> None:
    ep.send_all(encode_message(m))


def recv_message(ep: TransportEndpoint, timeout: Optional[float] = None) -> Message:
    """Block until one whole frame has arrived on ``ep``."""
    header = ep.recv_exactly(HEADER_SIZE, timeout)
    n = payload_length(header)
    if n:
        try:
            payload = ep.recv_exactly(n, timeout)
        except TransportError as exc:
            exc.bytes_read += HEADER_SIZE
            raise
    else:
        payload = b""
    return decode_message(header + payload)[0]


class RecordingEndpoint(TransportEndpoint):
    """Wraps an endpoint and keeps an ordered log of the frames crossing it.

    ``timeline`` holds ``(direction, Message)`` with direction ``"tx"`` or
    ``"rx"``. Bytes are reassembled per direction, so frames split across
    several reads are logged once complete.
    """

    def __init__(self, inner: TransportEndpoint):
        self.inner = inner
        self.timeline: list[tuple[str, Message]] = []
        self._pending = {"tx": bytearray(), "rx": bytearray()}
        self._lock = threading.Lock()

    def _feed(self, direction: str, data: bytes) -> None:
        with self._lock:
            buf = self._pending[direction]
            buf += data
            while len(buf) >= HEADER_SIZE and len(buf) >= HEADER_SIZE + payload_length(bytes(buf[:HEADER_SIZE])):
                m, used = decode_message(bytes(buf))
                del buf[:used]
                self.timeline.append((direction, m))

    def send_all(self, data: bytes) -> None:
        self.inner.send_all(data)
        self._feed("tx", data)

    def recv_exactly(self, n: int, timeout: Optional[float] = None) -> bytes:
        data = self.inner.recv_exactly(n, timeout)
        self._feed("rx", data)
        return data

    def close(self) -> None:
        self.inner.close()

    @property
    def closed(self) -> bool:
        return self.inner.closed


def timed_window_violations(timeline: list[tuple[str, Message]]) -> list[tuple[int, Message]]:
    """Data frames seen between an EXECUTE and its EXECUTE_DONE (or ERROR)."""
    bad = []
    open_window = False
    for i, (_direction, m) in enumerate(timeline):
        if m.msg_type is MsgType.EXECUTE:
            open_window = True
        elif m.msg_type in (MsgType.EXECUTE_DONE, MsgType.ERROR) and open_window:
            open_window = False
        elif open_window and m.msg_type in (MsgType.DATA_SEND, MsgType.DATA_REQUEST, MsgType.DATA_RESPONSE):
            bad.append((i, m))
    return bad
