"""VP-SDE kernels: perturbation, Tweedie score, predictor and corrector steps.

Every function is pure; randomness is always passed in (``z0`` / ``z``) so a
chain is reproducible from its noise draws. Timesteps follow the sampler's
convention: a reverse step at index ``i`` maps x_i to x_{i-1} using α_i, ᾱ_i and
ᾱ_{i-1}, with ᾱ_0 = 1, so the last step (i = 1) injects no noise.
"""

from __future__ import annotations

import math

import torch

from ckm_edge.diffusion.schedule import NoiseSchedule

__all__ = [
    "perturb",
    "score_from_noise",
    "ancestral_step",
    "langevin_step",
    "progressive_estimate",
]


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def perturb(x0: torch.Tensor, i: int, z0: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Sample of the perturbation kernel: √ᾱ_i·x0 + √(1-ᾱ_i)·z0 (``i = 0`` gives x0)."""
    _same_shape(x0, z0, "perturb")
    abar = sched.alpha_bar_at(i)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * z0


def score_from_noise(z0: torch.Tensor, i: int, sched: NoiseSchedule) -> torch.Tensor:
    """Tweedie target: the score of the perturbed marginal is -z0 / √(1-ᾱ_i)."""
    abar = sched.alpha_bar_at(i)
    if abar >= 1.0:
        raise ValueError(f"score undefined at timestep {i}: alpha_bar == 1")
    return -z0 / math.sqrt(1.0 - abar)


def ancestral_step(
    x_i: torch.Tensor,
    score: torch.Tensor,
    i: int,
    z: torch.Tensor,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """Predictor x_i → x_{i-1}.

    (1/√α_i)·x_i + ((1-α_i)/√α_i)·score + √((1-α_i)(1-ᾱ_{i-1})/(1-ᾱ_i))·z
    """
    _same_shape(x_i, score, "ancestral_step")
    _same_shape(x_i, z, "ancestral_step")
    alpha = sched.alpha_at(i)
    abar = sched.alpha_bar_at(i)
    abar_prev = sched.alpha_bar_at(i - 1)
    noise_coef = math.sqrt((1.0 - alpha) * (1.0 - abar_prev) / (1.0 - abar))
    out = x_i / math.sqrt(alpha) + ((1.0 - alpha) / math.sqrt(alpha)) * score
    if noise_coef == 0.0:
        return out
    return out + noise_coef * z


def langevin_step(x: torch.Tensor, score: torch.Tensor, eps: float, z: torch.Tensor) -> torch.Tensor:
    """Corrector: x + ε·score + √(2ε)·z."""
    if not eps > 0:
        raise ValueError(f"Langevin step size must be positive, got {eps}")
    _same_shape(x, score, "langevin_step")
    _same_shape(x, z, "langevin_step")
    return x + eps * score + math.sqrt(2.0 * eps) * z


def progressive_estimate(x_i: torch.Tensor, score: torch.Tensor, i: int, sched: NoiseSchedule) -> torch.Tensor:
    """Denoised estimate x̂₀ = (x_i + (1-ᾱ_i)·score) / √ᾱ_i."""
    _same_shape(x_i, score, "progressive_estimate")
    abar = sched.alpha_bar_at(i)
    return (x_i + (1.0 - abar) * score) / math.sqrt(abar)
