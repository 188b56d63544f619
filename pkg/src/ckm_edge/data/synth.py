"""Procedural CKM generator used in place of a real measurement dataset.

Axis-aligned rectangular buildings are dropped on an empty lattice, a base
station is placed on a free cell, and every cell receives

    g_dB = ref - 10·n·log10(max(d, 1)) - wall_loss · crossings + shadowing

where ``crossings`` counts building-edge transitions along the straight line from
the base station, and shadowing is a zero-mean Gaussian field (optionally
smoothed to a correlation length). The AoA channel is the sine of the bearing of
each cell seen from the base station, north up.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from ckm_edge.data.encoding import aoa_sine_to_pixel, gain_db_to_pixel
from ckm_edge.data.grid import CkmGrid

__all__ = ["SynthParams", "synth_generate", "wall_crossings"]


@dataclass(frozen=True)
class SynthParams:
    size: int = 64
    building_count: Tuple[int, int] = (3, 8)
    building_side: Optional[Tuple[int, int]] = None  # default: (max(2, size//16), size//4)
    pathloss_exponent: float = 2.0
    ref_gain_db: float = -30.0
    wall_loss_db: float = 25.0
    shadowing_std_db: float = 4.0
    shadowing_corr: float = 2.0  # Gaussian smoothing sigma in cells, 0 = white
    seed: int = 0

    def __post_init__(self) -> None:
        if self.size < 16:
            raise ValueError(f"size must be >= 16, got {self.size}")
        lo, hi = self.building_count
        if lo < 0 or lo > hi:
            raise ValueError(f"building_count range {self.building_count} is empty or negative")
        slo, shi = self.side_range
        if slo < 1 or slo > shi or shi > self.size:
            raise ValueError(f"building_side range {self.side_range} invalid for size {self.size}")
        if self.shadowing_std_db < 0 or self.shadowing_corr < 0:
            raise ValueError("shadowing std and correlation must be non-negative")

    @property
    def side_range(self) -> Tuple[int, int]:
        if self.building_side is not None:
            return tuple(self.building_side)  # type: ignore[return-value]
        return max(2, self.size // 16), max(2, self.size // 4)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["building_side"] = list(self.side_range)
        out["building_count"] = list(self.building_count)
        return out


def wall_crossings(building: np.ndarray, bs: Tuple[int, int]) -> np.ndarray:
    """Per-cell count of building-edge transitions on the segment from ``bs``."""
    h, w = building.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    span = int(np.ceil(np.hypot(h, w))) * 2 + 1
    t = np.linspace(0.0, 1.0, span)
    rr = np.rint(bs[0] + t[None, None, :] * (rows - bs[0])[..., None]).astype(np.intp)
    cc = np.rint(bs[1] + t[None, None, :] * (cols - bs[1])[..., None]).astype(np.intp)
    samples = building[rr, cc]
    return np.count_nonzero(samples[..., 1:] != samples[..., :-1], axis=-1)


def _place_buildings(rng: np.random.Generator, params: SynthParams) -> np.ndarray:
    n = params.size
    building = np.zeros((n, n), dtype=bool)
    count = int(rng.integers(params.building_count[0], params.building_count[1] + 1))
    slo, shi = params.side_range
    for _ in range(count):
        bh, bw = (int(v) for v in rng.integers(slo, shi + 1, size=2))
        top = int(rng.integers(0, n - bh + 1))
        left = int(rng.integers(0, n - bw + 1))
        building[top:top + bh, left:left + bw] = True
    return building


def _shadowing(rng: np.random.Generator, params: SynthParams) -> np.ndarray:
    field = rng.standard_normal((params.size, params.size))
    if params.shadowing_corr > 0:
        field = ndimage.gaussian_filter(field, sigma=params.shadowing_corr, mode="wrap")
        std = field.std()
        if std > 0:
            field = field / std
    return params.shadowing_std_db * field


def synth_generate(params: SynthParams) -> CkmGrid:
    """Generate one grid; deterministic given ``params.seed``."""
    rng = np.random.default_rng(params.seed)
    building = _place_buildings(rng, params)
    free = np.argwhere(~building)
    if len(free) == 0:
        raise ValueError(f"no free cell for base-station placement (seed {params.seed})")
    bs = tuple(int(v) for v in free[int(rng.integers(len(free)))])

    n = params.size
    rows, cols = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    dist = np.hypot(rows - bs[0], cols - bs[1])
    gain_db = (
        params.ref_gain_db
        - 10.0 * params.pathloss_exponent * np.log10(np.maximum(dist, 1.0))
        - params.wall_loss_db * wall_crossings(building, bs)
        + _shadowing(rng, params)
    )
    gain = np.where(building, 0.0, gain_db_to_pixel(gain_db))

    bearing = np.arctan2(bs[0] - rows, cols - bs[1])
    aoa = aoa_sine_to_pixel(np.sin(bearing), building)
    return CkmGrid(gain=gain, aoa_sine=aoa, building=building, bs=bs, region_id=f"synth-{params.seed}")
