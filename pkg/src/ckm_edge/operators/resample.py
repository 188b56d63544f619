"""Block-average downsampling (super-resolution task) and its nearest-neighbour inverse."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict

import torch
import torch.nn.functional as F

from ckm_edge.operators.base import ForwardOperator, Shape

__all__ = ["Downsample", "nearest_upsample"]


@dataclass(frozen=True, repr=False)
class Downsample(ForwardOperator):
    """C×H×W → C×(H/s)×(W/s), each output cell the mean of an s×s block."""

    scale: int = 2

    kind = "downsample"
    linear = True

    def __post_init__(self) -> None:
        if int(self.scale) != self.scale or self.scale < 1:
            raise ValueError(f"scale must be a positive integer, got {self.scale}")

    def output_shape(self, shape: Shape) -> Shape:
        c, h, w = shape
        if h % self.scale or w % self.scale:
            raise ValueError(f"grid {h}×{w} not divisible by scale factor {self.scale}")
        return (c, h // self.scale, w // self.scale)

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        self.output_shape(tuple(x.shape))
        return F.avg_pool2d(x.unsqueeze(0), self.scale)[0]

    def vjp(self, x: torch.Tensor, cotangent: torch.Tensor) -> torch.Tensor:
        expected = self.output_shape(tuple(x.shape))
        if tuple(cotangent.shape) != expected:
            raise ValueError(f"cotangent shape {tuple(cotangent.shape)} != output shape {expected}")
        return nearest_upsample(cotangent, self.scale) / float(self.scale ** 2)

    def validate_input(self, x: torch.Tensor) -> None:
        super().validate_input(x)
        self.output_shape(tuple(x.shape))

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "scale": self.scale}


def nearest_upsample(y: torch.Tensor, scale: int) -> torch.Tensor:
    """Replicate every cell of a C×h×w tensor into a ``scale``×``scale`` block."""
    return y.repeat_interleave(scale, dim=-2).repeat_interleave(scale, dim=-1)
