"""Forward operators A(·) and the observation model."""

from ckm_edge.operators.base import ForwardOperator, Observation, observe
from ckm_edge.operators.masks import Identity, MaskBox, MaskRandom
from ckm_edge.operators.nonlinear import (
    JointTruncQuant,
    QuantizeAoa,
    TruncateGain,
    quantize_angle,
    quantize_sine,
    sector_bounds,
    sector_centers,
)
from ckm_edge.operators.resample import Downsample, nearest_upsample

__all__ = [
    "Downsample",
    "ForwardOperator",
    "Identity",
    "JointTruncQuant",
    "MaskBox",
    "MaskRandom",
    "Observation",
    "QuantizeAoa",
    "TruncateGain",
    "nearest_upsample",
    "observe",
    "quantize_angle",
    "quantize_sine",
    "sector_bounds",
    "sector_centers",
]
