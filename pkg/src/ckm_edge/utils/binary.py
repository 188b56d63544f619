"""Little-endian binary helpers shared by the CKMG / CKMO / CKMW formats."""

from __future__ import annotations

import struct
import zlib
from typing import Any, Tuple

import numpy as np

from ckm_edge.errors import FormatError

__all__ = ["ByteReader", "with_crc", "check_crc"]

_CRC = struct.Struct("<I")


def with_crc(body: bytes) -> bytes:
    """Append the CRC32 of ``body``."""
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def check_crc(blob: bytes, kind: str) -> bytes:
    """Verify and strip the CRC32 trailer."""
    if len(blob) < _CRC.size:
        raise FormatError(f"{kind} file truncated ({len(blob)} bytes)")
    body, (crc,) = blob[:-_CRC.size], _CRC.unpack(blob[-_CRC.size:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError(f"{kind} CRC32 mismatch", hint="file is corrupt or truncated")
    return body


class ByteReader:
    """Cursor over a byte buffer raising ``FormatError`` on short reads."""

    def __init__(self, data: bytes, kind: str) -> None:
        self.data = data
        self.pos = 0
        self.kind = kind

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.kind} file truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct) -> Tuple[Any, ...]:
        return st.unpack(self.take(st.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize), dtype=dtype).copy()

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{self.kind} file has {len(self.data) - self.pos} trailing bytes")
