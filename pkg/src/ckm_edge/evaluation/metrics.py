"""RMSE in physical units.

Gain: pixel RMSE × 200 dB. AoA: pixel RMSE × 20/7, which is the RMSE of sin θ on
non-building cells. Both are computed on the pixel planes, building cells included
unless asked otherwise.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np
import torch

from ckm_edge.data.encoding import AOA_SINE_SCALE, GAIN_DB_SPAN
from ckm_edge.data.grid import AOA, GAIN, CkmGrid

__all__ = ["pixel_rmse", "rmse_gain_db", "rmse_aoa_sine"]

MapLike = Union[CkmGrid, np.ndarray, torch.Tensor]


def _planes(x: MapLike) -> np.ndarray:
    if isinstance(x, CkmGrid):
        return np.stack([x.gain, x.aoa_sine]).astype(np.float64)
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ValueError(f"expected a grid or a 2×H×W array, got shape {arr.shape}")
    return arr


def _selection(x_true: MapLike, shape, include_buildings: bool, building: Optional[np.ndarray]) -> np.ndarray:
    if include_buildings:
        return np.ones(shape, dtype=bool)
    if building is None:
        if not isinstance(x_true, CkmGrid):
            raise ValueError("include_buildings=False needs a building mask or a CkmGrid reference")
        building = x_true.building
    return ~np.asarray(building, dtype=bool)


def pixel_rmse(
    x_hat: MapLike,
    x_true: MapLike,
    channel: int,
    include_buildings: bool = True,
    building: Optional[np.ndarray] = None,
) -> float:
    a, b = _planes(x_hat), _planes(x_true)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    keep = _selection(x_true, a.shape[1:], include_buildings, building)
    if not keep.any():
        raise ValueError("RMSE over an empty cell selection")
    diff = a[channel][keep] - b[channel][keep]
    return float(np.sqrt(np.mean(diff ** 2)))


def rmse_gain_db(
    x_hat: MapLike,
    x_true: MapLike,
    include_buildings: bool = True,
    building: Optional[np.ndarray] = None,
) -> float:
    return GAIN_DB_SPAN * pixel_rmse(x_hat, x_true, GAIN, include_buildings, building)


def rmse_aoa_sine(
    x_hat: MapLike,
    x_true: MapLike,
    include_buildings: bool = True,
    building: Optional[np.ndarray] = None,
) -> float:
    return AOA_SINE_SCALE * pixel_rmse(x_hat, x_true, AOA, include_buildings, building)
