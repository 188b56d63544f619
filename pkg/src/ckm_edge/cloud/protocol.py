"""CKMP framing over a reliable byte stream.

::

    u32 magic 0x434B4D50 | u8 type | u32 payload length | payload

All integers little-endian. One request per frame; responses come back in request
order on the same connection.
"""

from __future__ import annotations

import json
import socket
import struct
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Optional, Tuple, Union

from ckm_edge.errors import NetworkError, ProtocolError
from ckm_edge.utils.logger import get_logger

__all__ = [
    "MAGIC",
    "MAX_PAYLOAD",
    "HEADER",
    "FrameType",
    "Frame",
    "encode_frame",
    "decode_header",
    "read_frame",
    "FramedConnection",
    "parse_address",
]

logger = get_logger(__name__)

MAGIC = 0x434B4D50
MAX_PAYLOAD = 256 * 1024 * 1024
HEADER = struct.Struct("<IBI")


class FrameType(IntEnum):
    LIST_REQ = 0x01
    LIST_RESP = 0x02
    GET_MANIFEST = 0x03
    MANIFEST = 0x04
    GET_WEIGHTS = 0x05
    WEIGHTS = 0x06
    ERROR = 0x7F


@dataclass(frozen=True)
class Frame:
    type: FrameType
    payload: bytes = b""

    @property
    def wire_size(self) -> int:
        return HEADER.size + len(self.payload)

    def text(self) -> str:
        try:
            return self.payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"{self.type.name} payload is not UTF-8") from exc

    def json(self) -> Any:
        try:
            return json.loads(self.text())
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"{self.type.name} payload is not valid JSON: {exc}") from exc


def encode_frame(ftype: Union[FrameType, int], payload: bytes = b"") -> bytes:
    ftype = FrameType(ftype)
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD} byte frame limit")
    return HEADER.pack(MAGIC, int(ftype), len(payload)) + bytes(payload)


def decode_header(header: bytes) -> Tuple[FrameType, int]:
    magic, raw_type, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic 0x{magic:08X}")
    try:
        ftype = FrameType(raw_type)
    except ValueError:
        raise ProtocolError(f"unknown frame type 0x{raw_type:02X}") from None
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"frame length {length} exceeds the {MAX_PAYLOAD} byte limit")
    return ftype, length


def _recv_exact(sock: socket.socket, length: int) -> bytes:
    chunks = []
    got = 0
    while got < length:
        chunk = sock.recv(min(length - got, 1 << 20))
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Optional[Frame]:
    """Next frame from ``sock``; ``None`` on a clean close between frames."""
    header = _recv_exact(sock, HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise ProtocolError("connection closed inside a frame header")
    ftype, length = decode_header(header)
    payload = _recv_exact(sock, length)
    if len(payload) < length:
        raise ProtocolError(f"connection closed after {len(payload)} of {length} payload bytes")
    return Frame(ftype, payload)


def parse_address(address: Union[str, Tuple[str, int]]) -> Tuple[str, int]:
    """``"host:port"`` (or a ready tuple) to ``(host, port)``."""
    if isinstance(address, tuple):
        return address[0], int(address[1])
    host, sep, port = str(address).rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got '{address}'")
    return host or "127.0.0.1", int(port)


class FramedConnection:
    """A socket speaking CKMP, with per-connection byte and frame counters."""

    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames_sent: Counter = Counter()
        self.frames_received: Counter = Counter()

    @classmethod
    def connect(cls, address: Union[str, Tuple[str, int]], timeout: Optional[float] = None) -> "FramedConnection":
        host, port = parse_address(address)
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise NetworkError(f"cannot connect to {host}:{port}: {exc}", hint="is `ckm serve` running?") from exc
        return cls(sock)

    def send(self, ftype: Union[FrameType, int], payload: bytes = b"") -> None:
        data = encode_frame(ftype, payload)
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise NetworkError(f"send failed: {exc}") from exc
        self.bytes_sent += len(data)
        self.frames_sent[FrameType(ftype)] += 1

    def send_error(self, message: str) -> None:
        self.send(FrameType.ERROR, message.encode("utf-8"))

    def recv(self) -> Optional[Frame]:
        try:
            frame = read_frame(self.sock)
        except socket.timeout as exc:
            raise NetworkError("timed out waiting for a frame") from exc
        except OSError as exc:
            raise NetworkError(f"receive failed: {exc}") from exc
        if frame is not None:
            self.bytes_received += frame.wire_size
            self.frames_received[frame.type] += 1
        return frame

    def request(self, ftype: FrameType, payload: bytes, expect: FrameType) -> Frame:
        """Send one request and return its response; ERROR frames raise ProtocolError."""
        self.send(ftype, payload)
        frame = self.recv()
        if frame is None:
            raise ProtocolError(f"server closed the connection before answering {ftype.name}")
        if frame.type == FrameType.ERROR:
            raise ProtocolError(f"server error: {frame.text()}")
        if frame.type != expect:
            raise ProtocolError(f"expected {expect.name}, got {frame.type.name}")
        return frame

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:  # pragma: no cover
            pass

    def __enter__(self) -> "FramedConnection":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
