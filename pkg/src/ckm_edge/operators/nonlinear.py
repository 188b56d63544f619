"""Non-linear operators: gain truncation, AoA sector quantization and their joint form.

The quantizer reports the centre angle of the half-open sector [θ_k, θ_k + Δ)
containing θ, with Δ = 360°/K and θ_k = -180° + kΔ. The AoA channel stores only
sin θ, so the pixel quantizer decodes to the principal branch θ = asin(s) and
re-encodes sin of a centre on that branch. Centres past ±90° (odd K) are swapped
for their principal-branch neighbour, which keeps the map idempotent for every K.

Quantization gradients use the straight-through estimator: the forward pass is
the hard quantizer, the backward pass the identity (zeroed on building cells).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Union

import numpy as np
import torch

from ckm_edge.data.encoding import AOA_OFFSET, AOA_PIXEL_MIN, AOA_SLOPE, check_aoa_pixels
from ckm_edge.data.grid import AOA, GAIN
from ckm_edge.operators.base import ForwardOperator, Shape

__all__ = [
    "TruncateGain",
    "QuantizeAoa",
    "JointTruncQuant",
    "sector_bounds",
    "sector_centers",
    "quantize_angle",
    "quantize_sine",
]

ArrayLike = Union[float, np.ndarray]


def _check_sectors(K: int) -> int:
    if int(K) != K or K < 2:
        raise ValueError(f"sector count K must be an integer >= 2, got {K}")
    return int(K)


def sector_bounds(K: int) -> np.ndarray:
    """θ_0..θ_K in degrees, θ_k = -180 + k·360/K."""
    K = _check_sectors(K)
    return -180.0 + np.arange(K + 1, dtype=np.float64) * (360.0 / K)


def sector_centers(K: int) -> np.ndarray:
    """Reported angles θ̃_k = -180 + (k + ½)·360/K in degrees."""
    K = _check_sectors(K)
    return -180.0 + (np.arange(K, dtype=np.float64) + 0.5) * (360.0 / K)


def quantize_angle(theta_deg: ArrayLike, K: int) -> ArrayLike:
    """Centre of the sector containing θ; +180° wraps to -180°."""
    theta = np.asarray(theta_deg, dtype=np.float64)
    outside = (theta < -180.0) | (theta >= 180.0)
    if outside.any():
        theta = np.where(outside, np.mod(theta + 180.0, 360.0) - 180.0, theta)
    k = np.searchsorted(sector_bounds(K), theta, side="right") - 1
    out = sector_centers(K)[np.clip(k, 0, K - 1)]
    return float(out) if np.ndim(theta_deg) == 0 else out


def quantize_sine(s: ArrayLike, K: int) -> ArrayLike:
    """Quantize on the sine axis with principal-branch sector centres.

    θ = asin(s) picks its sector; a centre beyond ±90° is replaced by the
    neighbouring centre on the principal branch, so every output is a fixed point.
    """
    K = _check_sectors(K)
    theta = np.degrees(np.arcsin(np.clip(np.asarray(s, dtype=np.float64), -1.0, 1.0)))
    centres = sector_centers(K)
    k = np.searchsorted(centres, quantize_angle(theta, K))
    k = np.where(centres[k] > 90.0, k - 1, np.where(centres[k] < -90.0, k + 1, k))
    out = np.sin(np.radians(centres[k]))
    return float(out) if np.ndim(s) == 0 else out


class _Truncate(torch.autograd.Function):
    """Clamp to [a, b]; gradient is the indicator of the open interval (a, b)."""

    @staticmethod
    def forward(ctx, v: torch.Tensor, a: float, b: float) -> torch.Tensor:
        ctx.save_for_backward(v)
        ctx.bounds = (a, b)
        return v.clamp(a, b)

    @staticmethod
    def backward(ctx, grad: torch.Tensor):
        (v,) = ctx.saved_tensors
        a, b = ctx.bounds
        return grad * ((v > a) & (v < b)).to(grad.dtype), None, None


def _building_tensor(building: Any) -> Optional[torch.Tensor]:
    if building is None:
        return None
    return torch.as_tensor(np.asarray(building, dtype=bool)).clone()


@dataclass(frozen=True, repr=False)
class TruncateGain(ForwardOperator):
    """Gain channel clamped to [a, b]; output is 1×H×W."""

    a: float = 0.2
    b: float = 0.7

    kind = "truncate_gain"

    def __post_init__(self) -> None:
        if not 0.0 <= self.a < self.b <= 1.0:
            raise ValueError(f"need 0 <= a < b <= 1, got a={self.a}, b={self.b}")

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        return _Truncate.apply(x[GAIN], float(self.a), float(self.b)).unsqueeze(0)

    def output_shape(self, shape: Shape) -> Shape:
        return (1, shape[1], shape[2])

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True, repr=False)
class QuantizeAoa(ForwardOperator):
    """AoA channel quantized to K sectors; building cells report 0. Output is 1×H×W."""

    K: int = 24
    building: Optional[torch.Tensor] = field(default=None, compare=False)

    kind = "quantize_aoa"
    needs_building = True

    def __post_init__(self) -> None:
        _check_sectors(self.K)
        object.__setattr__(self, "building", _building_tensor(self.building))

    def with_building(self, building: Any) -> "QuantizeAoa":
        return replace(self, building=building)

    def _building_for(self, x: torch.Tensor) -> torch.Tensor:
        shape = tuple(x.shape[-2:])
        if self.building is None:
            return torch.zeros(shape, dtype=torch.bool)
        if tuple(self.building.shape) != shape:
            raise ValueError(f"building mask {tuple(self.building.shape)} does not match grid {shape}")
        return self.building

    def hard(self, p: torch.Tensor) -> torch.Tensor:
        """Hard quantizer on AoA pixels (no gradient)."""
        s = ((p.detach().double().clamp(AOA_PIXEL_MIN, 1.0) - AOA_OFFSET) / AOA_SLOPE).numpy()
        q = AOA_SLOPE * quantize_sine(s, self.K) + AOA_OFFSET
        return torch.from_numpy(np.asarray(q, dtype=np.float32)).to(p.dtype)

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        p = x[AOA]
        building = self._building_for(x)
        ste = p + (self.hard(p) - p).detach()
        return torch.where(building, torch.zeros_like(ste), ste).unsqueeze(0)

    def output_shape(self, shape: Shape) -> Shape:
        return (1, shape[1], shape[2])

    def validate_input(self, x: torch.Tensor) -> None:
        super().validate_input(x)
        building = self._building_for(x)
        check_aoa_pixels(x[AOA].detach().numpy()[~building.numpy()])

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "K": self.K}


@dataclass(frozen=True, repr=False)
class JointTruncQuant(ForwardOperator):
    """(truncated gain, quantized AoA) stacked as 2×H×W."""

    a: float = 0.2
    b: float = 0.7
    K: int = 24
    building: Optional[torch.Tensor] = field(default=None, compare=False)

    kind = "jtqr"
    needs_building = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "building", _building_tensor(self.building))
        # construct parts once to validate parameters
        self.parts()

    def parts(self):
        return TruncateGain(self.a, self.b), QuantizeAoa(self.K, self.building)

    def with_building(self, building: Any) -> "JointTruncQuant":
        return replace(self, building=building)

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        gain_op, aoa_op = self.parts()
        return torch.cat([gain_op.apply(x), aoa_op.apply(x)], dim=0)

    def output_shape(self, shape: Shape) -> Shape:
        return (2, shape[1], shape[2])

    def validate_input(self, x: torch.Tensor) -> None:
        super().validate_input(x)
        self.parts()[1].validate_input(x)

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "a": self.a, "b": self.b, "K": self.K}
