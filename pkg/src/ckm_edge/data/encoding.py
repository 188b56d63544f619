"""Pixel encodings of the two CKM channels.

Gain: [-250, -50] dB maps linearly onto [0, 1]; building cells hold 0.
AoA: sin(theta) in [-1, 1] maps linearly onto [0.3, 1]; building cells hold 0 and
the open interval (0, 0.3) is never a valid pixel.

All functions accept Python scalars or numpy arrays and compute in float64.
"""

from __future__ import annotations

import enum
from typing import Union

import numpy as np

from ckm_edge.errors import EncodingError

__all__ = [
    "GAIN_DB_MIN",
    "GAIN_DB_MAX",
    "GAIN_DB_SPAN",
    "AOA_PIXEL_MIN",
    "AOA_SLOPE",
    "AOA_OFFSET",
    "AOA_SINE_SCALE",
    "NO_SIGNAL",
    "gain_db_to_pixel",
    "pixel_to_gain_db",
    "aoa_sine_to_pixel",
    "pixel_to_aoa_sine",
    "pixel_to_aoa_sine_array",
    "check_aoa_pixels",
]

GAIN_DB_MIN = -250.0
GAIN_DB_MAX = -50.0
GAIN_DB_SPAN = GAIN_DB_MAX - GAIN_DB_MIN  # 200 dB per unit pixel

AOA_PIXEL_MIN = 0.3
AOA_SLOPE = 0.35
AOA_OFFSET = 0.65
# RMSE scaling from AoA pixel domain to the sine domain: (1 - (-1)) / (1 - 0.3)
AOA_SINE_SCALE = 20.0 / 7.0

_TOL = 1e-6

ArrayLike = Union[float, np.ndarray]


class _Marker(enum.Enum):
    NO_SIGNAL = "no_signal"

    def __repr__(self) -> str:  # pragma: no cover (cosmetic)
        return "NO_SIGNAL"


NO_SIGNAL = _Marker.NO_SIGNAL
"""Decoded value of a building cell in the AoA channel (never a numeric sine)."""


def _as_float(value: ArrayLike) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unwrap(out: np.ndarray, like: ArrayLike) -> ArrayLike:
    return float(out) if np.ndim(like) == 0 else out


def gain_db_to_pixel(g_db: ArrayLike) -> ArrayLike:
    """Map gain in dB to a pixel in [0, 1]; values outside [-250, -50] saturate."""
    g = _as_float(g_db)
    if np.isnan(g).any():
        raise EncodingError("gain in dB must not be NaN")
    clipped = np.clip(g, GAIN_DB_MIN, GAIN_DB_MAX)
    return _unwrap((clipped - GAIN_DB_MIN) / GAIN_DB_SPAN, g_db)


def pixel_to_gain_db(p: ArrayLike) -> ArrayLike:
    """Inverse of :func:`gain_db_to_pixel`: ``-250 + 200 p``."""
    px = _as_float(p)
    if np.isnan(px).any() or (px < -_TOL).any() or (px > 1.0 + _TOL).any():
        raise EncodingError(f"gain pixel outside [0, 1]: min={np.nanmin(px):.6g} max={np.nanmax(px):.6g}")
    return _unwrap(GAIN_DB_MIN + GAIN_DB_SPAN * np.clip(px, 0.0, 1.0), p)


def aoa_sine_to_pixel(s: ArrayLike, is_building: Union[bool, np.ndarray] = False) -> ArrayLike:
    """Map sin(theta) in [-1, 1] to [0.3, 1]; building cells map to 0."""
    sv = _as_float(s)
    if np.isnan(sv).any() or (np.abs(sv) > 1.0 + _TOL).any():
        raise EncodingError("AoA sine must lie in [-1, 1]")
    pixel = AOA_SLOPE * np.clip(sv, -1.0, 1.0) + AOA_OFFSET
    pixel = np.where(np.asarray(is_building, dtype=bool), 0.0, pixel)
    return _unwrap(pixel, s if np.ndim(is_building) == 0 else is_building)


def check_aoa_pixels(p: np.ndarray) -> None:
    """Raise if any pixel is outside {0} ∪ [0.3, 1]."""
    px = _as_float(p)
    if np.isnan(px).any():
        raise EncodingError("AoA pixel is NaN")
    gap = (px > 0.0) & (px < AOA_PIXEL_MIN - _TOL)
    if gap.any():
        bad = float(px[gap].flat[0])
        raise EncodingError(f"AoA pixel {bad:.6g} lies in the forbidden gap (0, 0.3)")
    if (px < 0.0).any() or (px > 1.0 + _TOL).any():
        raise EncodingError("AoA pixel outside {0} ∪ [0.3, 1]")


def pixel_to_aoa_sine(p: float) -> Union[float, _Marker]:
    """Decode one AoA pixel: ``NO_SIGNAL`` for 0, else ``(p - 0.65) / 0.35``."""
    check_aoa_pixels(np.asarray(p))
    if p == 0.0:
        return NO_SIGNAL
    return float(np.clip((float(p) - AOA_OFFSET) / AOA_SLOPE, -1.0, 1.0))


def pixel_to_aoa_sine_array(p: np.ndarray) -> np.ma.MaskedArray:
    """Vectorised decode; building cells come back masked."""
    px = _as_float(p)
    check_aoa_pixels(px)
    sine = np.clip((px - AOA_OFFSET) / AOA_SLOPE, -1.0, 1.0)
    return np.ma.masked_array(sine, mask=(px == 0.0))
