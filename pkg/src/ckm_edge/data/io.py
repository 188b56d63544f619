"""Binary file formats for grids (CKMG) and observations (CKMO).

Both are little-endian with a CRC32 trailer over every preceding byte.

CKMG::

    "CKMG" | u16 version=1 | u16 channels=3 | u32 H | u32 W | u8 flags (bit0: BS)
    [u32 bs_row | u32 bs_col] | f32[H*W] gain | f32[H*W] aoa_sine | u8[H*W] building
    | u32 crc32

CKMO::

    "CKMO" | u16 version=1 | u8 C | u32 h | u32 w | u32 H | u32 W | f32 sigma
    | u32 n | n bytes operator JSON | u8 flags (bit0: building plane)
    | f32[C*h*w] y | [u8[H*W] building] | u32 crc32
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ckm_edge.data.grid import CkmGrid
from ckm_edge.errors import FormatError
from ckm_edge.utils.binary import ByteReader, check_crc, with_crc
from ckm_edge.utils.path_utils import atomic_write_bytes

__all__ = [
    "GRID_MAGIC",
    "OBS_MAGIC",
    "grid_to_bytes",
    "grid_from_bytes",
    "save_grid",
    "load_grid",
    "ObservationRecord",
    "observation_to_bytes",
    "observation_from_bytes",
]

GRID_MAGIC = b"CKMG"
OBS_MAGIC = b"CKMO"
GRID_VERSION = 1
OBS_VERSION = 1
_GRID_CHANNELS = 3
_FLAG_BS = 0x01
_FLAG_BUILDING = 0x01

_GRID_HEADER = struct.Struct("<4sHHIIB")
_PAIR = struct.Struct("<II")
_OBS_HEADER = struct.Struct("<4sHBIIIIfI")


# ---------------------------------------------------------------------------
# CKMG
# ---------------------------------------------------------------------------

def grid_to_bytes(grid: CkmGrid) -> bytes:
    flags = _FLAG_BS if grid.bs is not None else 0
    parts = [_GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, _GRID_CHANNELS, grid.height, grid.width, flags)]
    if grid.bs is not None:
        parts.append(_PAIR.pack(*grid.bs))
    parts.append(grid.gain.astype("<f4").tobytes())
    parts.append(grid.aoa_sine.astype("<f4").tobytes())
    parts.append(grid.building.astype(np.uint8).tobytes())
    return with_crc(b"".join(parts))


def grid_from_bytes(blob: bytes, region_id: str = "") -> CkmGrid:
    if blob[:4] != GRID_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {GRID_MAGIC!r}")
    body = check_crc(blob, "CKMG")
    reader = ByteReader(body, "CKMG")
    _, version, channels, height, width, flags = reader.unpack(_GRID_HEADER)
    if version != GRID_VERSION:
        raise FormatError(f"unsupported CKMG version {version}")
    if channels != _GRID_CHANNELS:
        raise FormatError(f"CKMG channel count {channels}, expected {_GRID_CHANNELS}")
    bs = reader.unpack(_PAIR) if flags & _FLAG_BS else None
    n = height * width
    gain = reader.array("<f4", n).reshape(height, width)
    aoa = reader.array("<f4", n).reshape(height, width)
    building = reader.array("u1", n).reshape(height, width)
    reader.finish()
    if (building > 1).any():
        raise FormatError("building plane must hold 0/1 bytes")
    return CkmGrid(gain=gain, aoa_sine=aoa, building=building.astype(bool), bs=bs, region_id=region_id)


def save_grid(grid: CkmGrid, path: Path) -> Path:
    """Write ``grid`` to ``path`` in CKMG format (atomic)."""
    return atomic_write_bytes(Path(path), grid_to_bytes(grid))


def load_grid(path: Path, region_id: str = "") -> CkmGrid:
    """Read a CKMG file; raises ``FormatError`` or ``EncodingError`` on bad content."""
    return grid_from_bytes(Path(path).read_bytes(), region_id=region_id)


# ---------------------------------------------------------------------------
# CKMO
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservationRecord:
    """Raw content of an observation file, independent of operator classes."""

    y: np.ndarray
    sigma: float
    operator_spec: Dict[str, Any]
    grid_shape: Tuple[int, int]
    building: Optional[np.ndarray] = None


def observation_to_bytes(rec: ObservationRecord) -> bytes:
    y = np.asarray(rec.y, dtype="<f4")
    if y.ndim != 3:
        raise ValueError(f"observation y must be C×h×w, got shape {y.shape}")
    spec = json.dumps(rec.operator_spec, sort_keys=True, separators=(",", ":")).encode("utf-8")
    c, h, w = y.shape
    gh, gw = rec.grid_shape
    parts = [
        _OBS_HEADER.pack(OBS_MAGIC, OBS_VERSION, c, h, w, gh, gw, float(rec.sigma), len(spec)),
        spec,
        struct.pack("<B", _FLAG_BUILDING if rec.building is not None else 0),
        y.tobytes(),
    ]
    if rec.building is not None:
        parts.append(np.asarray(rec.building, dtype=bool).astype(np.uint8).tobytes())
    return with_crc(b"".join(parts))


def observation_from_bytes(blob: bytes) -> ObservationRecord:
    if blob[:4] != OBS_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {OBS_MAGIC!r}")
    body = check_crc(blob, "CKMO")
    reader = ByteReader(body, "CKMO")
    _, version, c, h, w, gh, gw, sigma, spec_len = reader.unpack(_OBS_HEADER)
    if version != OBS_VERSION:
        raise FormatError(f"unsupported CKMO version {version}")
    try:
        spec = json.loads(reader.take(spec_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"operator JSON in observation is invalid: {exc}") from exc
    (flags,) = reader.unpack(struct.Struct("<B"))
    y = reader.array("<f4", c * h * w).reshape(c, h, w)
    building = None
    if flags & _FLAG_BUILDING:
        building = reader.array("u1", gh * gw).reshape(gh, gw).astype(bool)
    reader.finish()
    if not np.isfinite(y).all():
        raise FormatError("observation contains non-finite values")
    return ObservationRecord(y=y, sigma=float(sigma), operator_spec=spec, grid_shape=(gh, gw), building=building)
