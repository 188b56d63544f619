"""Reference reconstructions that use no prior."""

from __future__ import annotations

import numpy as np
import torch
from scipy import ndimage

from ckm_edge.operators.base import Observation
from ckm_edge.operators.resample import nearest_upsample

__all__ = ["nearest_fill_baseline", "baseline_estimate"]


def nearest_fill_baseline(y: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Copy each unobserved cell from its nearest observed cell (Euclidean, both channels)."""
    y = np.asarray(y, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    if y.shape[1:] != observed.shape:
        raise ValueError(f"mask {observed.shape} does not match observation {y.shape}")
    if not observed.any():
        raise ValueError("no observed cells to fill from")
    if observed.all():
        return y.copy()
    _, (rows, cols) = ndimage.distance_transform_edt(~observed, return_indices=True)
    return y[:, rows, cols]


def baseline_estimate(obs: Observation) -> np.ndarray:
    """Prior-free 2×H×W estimate for the evaluation tasks.

    Masks: nearest-observed-neighbour fill. Downsampling: nearest-neighbour
    upsampling. Identity and JTQR: the observation decoded as-is.
    """
    kind = obs.operator.kind
    y = obs.y.detach().numpy().astype(np.float64)
    if kind in ("mask_box", "mask_random"):
        return nearest_fill_baseline(y, obs.operator.observed_mask(obs.grid_shape))
    if kind == "downsample":
        return nearest_upsample(torch.from_numpy(y), obs.operator.scale).numpy()
    if kind in ("identity", "jtqr"):
        return y
    raise ValueError(f"no baseline defined for operator kind '{kind}'")
