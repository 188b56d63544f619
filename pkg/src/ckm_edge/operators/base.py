"""Forward-operator interface and the observation model y = A(x) + n."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar, Dict, Optional, Tuple

import numpy as np
import torch

from ckm_edge.data.grid import CkmGrid

__all__ = ["ForwardOperator", "Observation", "observe", "Shape"]

Shape = Tuple[int, int, int]


class ForwardOperator(ABC):
    """Degradation A(·) acting on 2×H×W pixel-domain tensors.

    ``apply`` is built from differentiable torch ops, so the sampler can
    backpropagate through it; ``vjp`` returns cotangentᵀ·∂A/∂x at ``x``.
    Operators are immutable after construction.
    """

    kind: ClassVar[str] = ""
    linear: ClassVar[bool] = False
    needs_building: ClassVar[bool] = False

    @abstractmethod
    def apply(self, x: torch.Tensor) -> torch.Tensor:
        """A(x) for one 2×H×W state."""

    @abstractmethod
    def output_shape(self, shape: Shape) -> Shape:
        """Shape of A(x) for an input of ``shape``."""

    @abstractmethod
    def to_spec(self) -> Dict[str, Any]:
        """JSON-ready ``{"kind": ..., params...}`` that rebuilds this operator."""

    def vjp(self, x: torch.Tensor, cotangent: torch.Tensor) -> torch.Tensor:
        expected = self.output_shape(tuple(x.shape))
        if tuple(cotangent.shape) != expected:
            raise ValueError(f"cotangent shape {tuple(cotangent.shape)} != output shape {expected}")
        with torch.enable_grad():
            leaf = x.detach().requires_grad_(True)
            (grad,) = torch.autograd.grad(self.apply(leaf), leaf, grad_outputs=cotangent)
        return grad

    def observed_mask(self, shape: Tuple[int, int]) -> Optional[np.ndarray]:
        """Boolean H×W mask of measured cells, ``None`` when every cell is measured."""
        return None

    def validate_input(self, x: torch.Tensor) -> None:
        if x.dim() != 3 or x.shape[0] != 2:
            raise ValueError(f"{self.kind} expects a 2×H×W tensor, got {tuple(x.shape)}")

    def __repr__(self) -> str:
        params = ", ".join(f"{k}={v}" for k, v in self.to_spec().items() if k != "kind")
        return f"{type(self).__name__}({params})"


@dataclass(frozen=True, eq=False)
class Observation:
    """y = A(x) + n together with A, σ and the grid shape x lives on."""

    y: torch.Tensor
    operator: ForwardOperator
    sigma: float
    grid_shape: Tuple[int, int]

    def __post_init__(self) -> None:
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        object.__setattr__(self, "grid_shape", (int(self.grid_shape[0]), int(self.grid_shape[1])))
        expected = self.operator.output_shape((2,) + self.grid_shape)
        if tuple(self.y.shape) != expected:
            raise ValueError(f"y has shape {tuple(self.y.shape)}, operator produces {expected}")
        object.__setattr__(self, "y", self.y.detach().to(torch.float32))


def observe(grid: CkmGrid, op: ForwardOperator, sigma: float = 0.01, seed: int = 0) -> Observation:
    """Measure ``grid`` through ``op`` with seeded Gaussian noise of std ``sigma``.

    Cells an operator does not measure stay exactly 0 in y.
    """
    if not sigma >= 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    x = grid.to_tensor()
    op.validate_input(x)
    with torch.no_grad():
        clean = op.apply(x)
    y = clean
    if sigma > 0:
        gen = torch.Generator().manual_seed(int(seed))
        y = clean + sigma * torch.randn(clean.shape, generator=gen)
        mask = op.observed_mask(grid.shape)
        if mask is not None:
            y = y * torch.from_numpy(mask.astype(np.float32))
    return Observation(y=y, operator=op, sigma=float(sigma), grid_shape=grid.shape)
