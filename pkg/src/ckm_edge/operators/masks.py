"""Masking operators: measured cells copied, unmeasured cells set to 0 in both channels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Tuple

import numpy as np
import torch

from ckm_edge.operators.base import ForwardOperator, Shape

__all__ = ["Identity", "MaskBox", "MaskRandom"]


class _MaskOperator(ForwardOperator):
    linear = True

    def observed_mask(self, shape: Tuple[int, int]) -> np.ndarray:
        raise NotImplementedError

    def _weights(self, x: torch.Tensor) -> torch.Tensor:
        mask = self.observed_mask((int(x.shape[-2]), int(x.shape[-1])))
        return torch.from_numpy(mask.astype(np.float32)).to(x.dtype)

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        return x * self._weights(x)

    def output_shape(self, shape: Shape) -> Shape:
        return tuple(shape)

    def vjp(self, x: torch.Tensor, cotangent: torch.Tensor) -> torch.Tensor:
        if cotangent.shape != x.shape:
            raise ValueError(f"cotangent shape {tuple(cotangent.shape)} != input shape {tuple(x.shape)}")
        return cotangent * self._weights(x)


@dataclass(frozen=True, repr=False)
class Identity(ForwardOperator):
    """A(x) = x (pure denoising)."""

    kind = "identity"
    linear = True

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        return x

    def vjp(self, x: torch.Tensor, cotangent: torch.Tensor) -> torch.Tensor:
        if cotangent.shape != x.shape:
            raise ValueError(f"cotangent shape {tuple(cotangent.shape)} != input shape {tuple(x.shape)}")
        return cotangent

    def output_shape(self, shape: Shape) -> Shape:
        return tuple(shape)

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind}


@dataclass(frozen=True, repr=False)
class MaskBox(_MaskOperator):
    """Zero an ``h_box``×``w_box`` rectangle whose top-left cell is (top, left)."""

    top: int
    left: int
    h_box: int
    w_box: int

    kind = "mask_box"

    def __post_init__(self) -> None:
        if min(self.top, self.left, self.h_box, self.w_box) < 0:
            raise ValueError(f"box parameters must be non-negative: {self.to_spec()}")

    def observed_mask(self, shape: Tuple[int, int]) -> np.ndarray:
        height, width = shape
        if self.top + self.h_box > height or self.left + self.w_box > width:
            raise ValueError(
                f"box ({self.top},{self.left},{self.h_box}×{self.w_box}) out of bounds for {height}×{width} grid"
            )
        mask = np.ones((height, width), dtype=bool)
        mask[self.top:self.top + self.h_box, self.left:self.left + self.w_box] = False
        return mask

    def validate_input(self, x: torch.Tensor) -> None:
        super().validate_input(x)
        self.observed_mask((int(x.shape[1]), int(x.shape[2])))

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "top": self.top, "left": self.left, "h_box": self.h_box, "w_box": self.w_box}


@lru_cache(maxsize=64)
def _random_mask(height: int, width: int, ratio: float, seed: int) -> np.ndarray:
    n = height * width
    count = int(math.floor(ratio * n))
    mask = np.ones(n, dtype=bool)
    mask[np.random.default_rng(seed).permutation(n)[:count]] = False
    mask = mask.reshape(height, width)
    mask.setflags(write=False)
    return mask


@dataclass(frozen=True, repr=False)
class MaskRandom(_MaskOperator):
    """Zero ⌊ratio·H·W⌋ cells drawn without replacement under ``seed``."""

    ratio: float
    seed: int = 0

    kind = "mask_random"

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio must lie in [0, 1], got {self.ratio}")

    def observed_mask(self, shape: Tuple[int, int]) -> np.ndarray:
        return _random_mask(int(shape[0]), int(shape[1]), float(self.ratio), int(self.seed))

    def masked_count(self, shape: Tuple[int, int]) -> int:
        return int((~self.observed_mask(shape)).sum())

    def to_spec(self) -> Dict[str, Any]:
        return {"kind": self.kind, "ratio": self.ratio, "seed": self.seed}
