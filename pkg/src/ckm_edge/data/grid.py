"""The CKM grid: gain plane, AoA-sine plane and building mask on an H×W lattice."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch

from ckm_edge.data.encoding import AOA_PIXEL_MIN, check_aoa_pixels
from ckm_edge.errors import EncodingError

__all__ = ["CkmGrid", "project_to_encoding", "GAIN", "AOA"]

# Channel indices of the 2-channel tensor form.
GAIN = 0
AOA = 1

_TOL = 1e-6


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CkmGrid:
    """Immutable channel knowledge map.

    ``gain`` and ``aoa_sine`` are float32 pixel planes, ``building`` a boolean plane
    (True = building). ``bs`` is the optional (row, col) of the base station.
    Construction validates every encoding invariant; arrays are stored read-only.
    """

    gain: np.ndarray
    aoa_sine: np.ndarray
    building: np.ndarray
    bs: Optional[Tuple[int, int]] = None
    region_id: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "gain", _frozen(self.gain, np.float32))
        object.__setattr__(self, "aoa_sine", _frozen(self.aoa_sine, np.float32))
        object.__setattr__(self, "building", _frozen(self.building, np.bool_))
        if self.bs is not None:
            object.__setattr__(self, "bs", (int(self.bs[0]), int(self.bs[1])))
        self.validate()

    @property
    def height(self) -> int:
        return int(self.gain.shape[0])

    @property
    def width(self) -> int:
        return int(self.gain.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def validate(self) -> None:
        """Raise ``EncodingError`` on any invariant violation."""
        if self.gain.ndim != 2:
            raise EncodingError(f"gain plane must be 2-D, got shape {self.gain.shape}")
        if self.aoa_sine.shape != self.gain.shape or self.building.shape != self.gain.shape:
            raise EncodingError(
                f"channel shapes disagree: gain {self.gain.shape}, aoa {self.aoa_sine.shape}, "
                f"building {self.building.shape}"
            )
        if not np.isfinite(self.gain).all() or not np.isfinite(self.aoa_sine).all():
            raise EncodingError("grid contains non-finite pixels")
        if (self.gain < -_TOL).any() or (self.gain > 1.0 + _TOL).any():
            raise EncodingError("gain pixels must lie in [0, 1]")
        check_aoa_pixels(self.aoa_sine)
        if (self.gain[self.building] != 0.0).any():
            raise EncodingError("building cells must have gain pixel exactly 0")
        if (self.aoa_sine[self.building] != 0.0).any():
            raise EncodingError("building cells must have AoA pixel exactly 0")
        if (self.aoa_sine[~self.building] < AOA_PIXEL_MIN - _TOL).any():
            raise EncodingError("non-building cells must have AoA pixel in [0.3, 1]")
        if self.bs is not None:
            r, c = self.bs
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise EncodingError(f"base station {self.bs} outside {self.shape} grid")

    def to_tensor(self) -> torch.Tensor:
        """The 2×H×W float32 tensor the score network and operators work on."""
        return torch.from_numpy(np.stack([self.gain, self.aoa_sine]).astype(np.float32))

    @classmethod
    def from_tensor(
        cls,
        x: torch.Tensor,
        building: Optional[np.ndarray] = None,
        bs: Optional[Tuple[int, int]] = None,
        region_id: str = "",
    ) -> "CkmGrid":
        """Build a grid from an arbitrary 2×H×W estimate via :func:`project_to_encoding`."""
        gain, aoa, bmask = project_to_encoding(x, building)
        return cls(gain=gain, aoa_sine=aoa, building=bmask, bs=bs, region_id=region_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CkmGrid):
            return NotImplemented
        return (
            self.bs == other.bs
            and np.array_equal(self.gain, other.gain)
            and np.array_equal(self.aoa_sine, other.aoa_sine)
            and np.array_equal(self.building, other.building)
        )

    __hash__ = None  # type: ignore[assignment]


def project_to_encoding(
    x: torch.Tensor, building: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Snap a real-valued 2×H×W estimate onto a valid encoding.

    AoA pixels below the gap midpoint 0.15 become the building sentinel, the rest
    are clipped to [0.3, 1]; gain is clipped to [0, 1] and zeroed on building cells.
    A known ``building`` mask overrides what the AoA channel suggests.
    """
    arr = x.detach().cpu().numpy().astype(np.float64) if isinstance(x, torch.Tensor) else np.asarray(x, np.float64)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ValueError(f"expected a 2×H×W estimate, got shape {arr.shape}")
    gain = np.clip(arr[GAIN], 0.0, 1.0)
    aoa = arr[AOA]
    bmask = aoa < AOA_PIXEL_MIN / 2.0 if building is None else np.asarray(building, dtype=bool)
    aoa = np.where(bmask, 0.0, np.clip(aoa, AOA_PIXEL_MIN, 1.0))
    gain = np.where(bmask, 0.0, gain)
    return gain.astype(np.float32), aoa.astype(np.float32), bmask
