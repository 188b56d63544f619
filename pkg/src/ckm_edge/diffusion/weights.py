"""CKMW weights file.

::

    "CKMW" | u16 version=1 | u32 n | n bytes JSON descriptor
    | u32 tensor count | per tensor: u16 name length, name, u8 rank, u32 dims..., f32 data
    | u32 crc32

The descriptor carries ``arch``, ``N``, ``beta_min``, ``beta_max``, ``channels`` and
``trained_steps``. Tensors are written in state-dict order.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from ckm_edge.diffusion.network import ArchDescriptor
from ckm_edge.diffusion.schedule import SCHEDULE_FAMILY
from ckm_edge.diffusion.score_model import ScoreNetParams
from ckm_edge.errors import FormatError
from ckm_edge.utils.binary import ByteReader, check_crc, with_crc
from ckm_edge.utils.path_utils import atomic_write_bytes

__all__ = ["WEIGHTS_MAGIC", "weights_to_bytes", "weights_from_bytes", "save_weights", "load_weights"]

WEIGHTS_MAGIC = b"CKMW"
WEIGHTS_VERSION = 1

_HEAD = struct.Struct("<4sHI")
_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")
_U8 = struct.Struct("<B")
_REQUIRED = ("arch", "N", "beta_min", "beta_max", "channels", "trained_steps")


def weights_to_bytes(params: ScoreNetParams) -> bytes:
    desc = json.dumps(params.descriptor(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_HEAD.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, len(desc)), desc, _U32.pack(len(params.tensors))]
    for name, value in params.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(_U16.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U8.pack(value.dim()))
        parts.extend(_U32.pack(d) for d in value.shape)
        parts.append(value.numpy().astype("<f4").tobytes())
    return with_crc(b"".join(parts))


def weights_from_bytes(blob: bytes) -> ScoreNetParams:
    if blob[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {WEIGHTS_MAGIC!r}")
    reader = ByteReader(check_crc(blob, "CKMW"), "CKMW")
    _, version, desc_len = reader.unpack(_HEAD)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported CKMW version {version}")
    try:
        desc = json.loads(reader.take(desc_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"CKMW descriptor is not valid JSON: {exc}") from exc
    missing = [k for k in _REQUIRED if k not in desc]
    if missing:
        raise FormatError(f"CKMW descriptor lacks {', '.join(missing)}")
    try:
        arch = ArchDescriptor.parse(desc["arch"])
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    if arch.channels != int(desc["channels"]):
        raise FormatError(f"descriptor channels {desc['channels']} disagree with arch '{desc['arch']}'")

    (count,) = reader.unpack(_U32)
    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack(_U16)
        name = reader.take(name_len).decode("utf-8", errors="replace")
        (rank,) = reader.unpack(_U8)
        dims = tuple(reader.unpack(_U32)[0] for _ in range(rank))
        data = reader.array("<f4", int(np.prod(dims, dtype=np.int64)))
        tensors[name] = torch.from_numpy(data.reshape(dims))
    reader.finish()

    schedule = {
        "N": int(desc["N"]),
        "beta_min": float(desc["beta_min"]),
        "beta_max": float(desc["beta_max"]),
        "family": SCHEDULE_FAMILY,
    }
    # ScoreNetParams names the first tensor whose shape disagrees with the arch
    return ScoreNetParams(arch=arch, schedule=schedule, tensors=tensors, trained_steps=int(desc["trained_steps"]))


def save_weights(params: ScoreNetParams, path: Path) -> Path:
    return atomic_write_bytes(Path(path), weights_to_bytes(params))


def load_weights(path: Path) -> ScoreNetParams:
    return weights_from_bytes(Path(path).read_bytes())
