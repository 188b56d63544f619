"""Discretised variance-preserving noise schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

__all__ = ["NoiseSchedule", "make_schedule", "SCHEDULE_FAMILY"]

SCHEDULE_FAMILY = "VP"
_CONTINUOUS_BETA_MIN = 0.1
_CONTINUOUS_BETA_MAX = 20.0


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Coefficients β_i, α_i = 1 - β_i, ᾱ_i = ∏_{j≤i} α_j for i = 1..N (float64).

    Arrays are 0-based (``beta[i - 1]`` is β_i); use the ``*_at`` accessors for
    1-based timesteps. ``alpha_bar_at(0)`` is 1 by convention.
    """

    n_timesteps: int
    beta_min: float
    beta_max: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def N(self) -> int:  # noqa: N802 (matches the usual symbol)
        return self.n_timesteps

    def _check(self, i: int, lowest: int) -> int:
        i = int(i)
        if not lowest <= i <= self.n_timesteps:
            raise ValueError(f"timestep {i} outside [{lowest}, {self.n_timesteps}]")
        return i

    def beta_at(self, i: int) -> float:
        return float(self.beta[self._check(i, 1) - 1])

    def alpha_at(self, i: int) -> float:
        return float(self.alpha[self._check(i, 1) - 1])

    def alpha_bar_at(self, i: int) -> float:
        i = self._check(i, 0)
        return 1.0 if i == 0 else float(self.alpha_bar[i - 1])

    def meta(self) -> Dict[str, Any]:
        """Serialisable form stored in weights headers and manifests."""
        return {"N": self.n_timesteps, "beta_min": self.beta_min, "beta_max": self.beta_max, "family": SCHEDULE_FAMILY}

    @classmethod
    def from_meta(cls, meta: Dict[str, Any]) -> "NoiseSchedule":
        family = meta.get("family", SCHEDULE_FAMILY)
        if family != SCHEDULE_FAMILY:
            raise ValueError(f"unsupported schedule family '{family}'")
        return make_schedule(int(meta["N"]), float(meta["beta_min"]), float(meta["beta_max"]))


def make_schedule(
    n_timesteps: int = 1000,
    beta_min: Optional[float] = None,
    beta_max: Optional[float] = None,
) -> NoiseSchedule:
    """Linear β ramp from ``beta_min`` to ``beta_max`` over N steps.

    Omitted endpoints follow the continuous-time VP process (β(t) from 0.1 to 20)
    discretised over N steps, i.e. ``0.1 / N`` and ``20 / N``; N = 1000 gives the
    usual 1e-4 .. 0.02 ramp and shorter chains stay near-Gaussian at the end.
    """
    if n_timesteps < 10:
        raise ValueError(f"N must be >= 10, got {n_timesteps}")
    if beta_min is None:
        beta_min = _CONTINUOUS_BETA_MIN / n_timesteps
    if beta_max is None:
        beta_max = _CONTINUOUS_BETA_MAX / n_timesteps
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    beta = np.linspace(beta_min, beta_max, n_timesteps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if alpha_bar[-1] >= 0.01:
        raise ValueError(
            f"terminal alpha_bar {alpha_bar[-1]:.4g} >= 0.01; increase N or beta_max"
        )
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(
        n_timesteps=n_timesteps,
        beta_min=float(beta_min),
        beta_max=float(beta_max),
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
    )
