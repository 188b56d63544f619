"""Score-network parameters and the operations defined on them.

``ScoreNetParams`` is immutable: the tensors are detached copies and the lazily
built evaluation module has ``requires_grad`` off, so ``forward`` and
``vjp_input`` can run concurrently from several threads.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from ckm_edge.diffusion.network import ArchDescriptor, ScoreUNet
from ckm_edge.diffusion.schedule import NoiseSchedule
from ckm_edge.diffusion.sde import ancestral_step
from ckm_edge.errors import FormatError

__all__ = [
    "ScoreNetParams",
    "init_params",
    "forward",
    "vjp_input",
    "loss",
    "batch_loss",
    "grad_params",
    "sample_prior",
]

Timesteps = Union[int, Sequence[int], torch.Tensor]


@dataclass(frozen=True, eq=False)
class ScoreNetParams:
    """θ for a fixed architecture, plus the schedule it was trained under."""

    arch: ArchDescriptor
    schedule: Dict[str, Any]
    tensors: Mapping[str, torch.Tensor]
    trained_steps: int = 0

    def __post_init__(self) -> None:
        reference = OrderedDict((k, tuple(v.shape)) for k, v in ScoreUNet(self.arch).state_dict().items())
        missing = [k for k in reference if k not in self.tensors]
        if missing:
            raise FormatError(f"tensor '{missing[0]}' missing for architecture {self.arch.to_string()}")
        extra = [k for k in self.tensors if k not in reference]
        if extra:
            raise FormatError(f"tensor '{extra[0]}' not part of architecture {self.arch.to_string()}")
        frozen = OrderedDict()
        for name, shape in reference.items():
            value = torch.as_tensor(self.tensors[name]).detach().to(torch.float32).clone()
            if tuple(value.shape) != shape:
                raise FormatError(
                    f"tensor '{name}' has shape {tuple(value.shape)}, architecture expects {shape}"
                )
            if not torch.isfinite(value).all():
                raise FormatError(f"tensor '{name}' contains non-finite values")
            frozen[name] = value
        object.__setattr__(self, "tensors", frozen)
        if self.trained_steps < 0:
            raise ValueError("trained_steps must be >= 0")

    @property
    def n_timesteps(self) -> int:
        return int(self.schedule["N"])

    @property
    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule.from_meta(self.schedule)

    def descriptor(self) -> Dict[str, Any]:
        """Header fields of the CKMW weights format."""
        return {
            "arch": self.arch.to_string(),
            "N": self.n_timesteps,
            "beta_min": float(self.schedule["beta_min"]),
            "beta_max": float(self.schedule["beta_max"]),
            "channels": self.arch.channels,
            "trained_steps": self.trained_steps,
        }

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, value in self.tensors.items():
            h.update(name.encode("utf-8"))
            h.update(value.numpy().astype("<f4").tobytes())
        return h.hexdigest()

    def build_module(self, trainable: bool = False) -> ScoreUNet:
        """Fresh module loaded with these tensors."""
        net = ScoreUNet(self.arch)
        net.load_state_dict(self.tensors)
        net.train(trainable)
        net.requires_grad_(trainable)
        return net

    @cached_property
    def network(self) -> ScoreUNet:
        return self.build_module(trainable=False)


def init_params(arch: ArchDescriptor, sched: NoiseSchedule, seed: int = 0) -> ScoreNetParams:
    """Default PyTorch initialisation under ``seed``; output head zero."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = ScoreUNet(arch)
    return ScoreNetParams(arch=arch, schedule=sched.meta(), tensors=net.state_dict())


def _timestep_tensor(i: Timesteps, batch: int, n_timesteps: int) -> torch.Tensor:
    t = torch.as_tensor(i, dtype=torch.int64).reshape(-1)
    if t.numel() == 1:
        t = t.expand(batch)
    if t.numel() != batch:
        raise ValueError(f"got {t.numel()} timesteps for a batch of {batch}")
    if int(t.min()) < 1 or int(t.max()) > n_timesteps:
        raise ValueError(f"timesteps must lie in [1, {n_timesteps}]")
    return t


def _check_input(arch: ArchDescriptor, x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4 or x.shape[1] != arch.channels:
        raise ValueError(f"expected (B, {arch.channels}, H, W) or ({arch.channels}, H, W), got {tuple(x.shape)}")
    d = arch.divisor
    if x.shape[2] % d or x.shape[3] % d:
        raise ValueError(f"H and W must be divisible by {d}, got {tuple(x.shape[2:])}")
    return x.to(torch.float32)


def forward(params: ScoreNetParams, x: torch.Tensor, i: Timesteps) -> torch.Tensor:
    """s_θ(x, i) for a single state (C, H, W) or a batch (B, C, H, W)."""
    batched = x.dim() == 4
    xb = _check_input(params.arch, x)
    t = _timestep_tensor(i, xb.shape[0], params.n_timesteps)
    out = params.network(xb, t)
    return out if batched else out[0]


def vjp_input(params: ScoreNetParams, x: torch.Tensor, i: Timesteps, cotangent: torch.Tensor) -> torch.Tensor:
    """cotangentᵀ · ∂s_θ(x, i)/∂x without forming the Jacobian."""
    if cotangent.shape != x.shape:
        raise ValueError(f"cotangent shape {tuple(cotangent.shape)} != input shape {tuple(x.shape)}")
    with torch.enable_grad():
        leaf = x.detach().to(torch.float32).requires_grad_(True)
        out = forward(params, leaf, i)
        (grad,) = torch.autograd.grad(out, leaf, grad_outputs=cotangent.to(out.dtype))
    return grad


def _alpha_bar_table(sched: NoiseSchedule) -> torch.Tensor:
    return torch.from_numpy(np.asarray(sched.alpha_bar, dtype=np.float64))


def batch_loss(
    net: ScoreUNet,
    x0: torch.Tensor,
    t: torch.Tensor,
    z0: torch.Tensor,
    sched: NoiseSchedule,
    weighting: str = "none",
) -> torch.Tensor:
    """Denoising score-matching loss of ``net`` on a (B, C, H, W) batch.

    ``weighting="sigma2"`` scales each sample's squared error by 1 - ᾱ_i.
    """
    if x0.shape != z0.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != z0 shape {tuple(z0.shape)}")
    abar = _alpha_bar_table(sched)[t - 1]
    var = (1.0 - abar).to(torch.float32)[:, None, None, None]
    mean_coef = abar.sqrt().to(torch.float32)[:, None, None, None]
    x_i = mean_coef * x0 + var.sqrt() * z0
    target = -z0 / var.sqrt()
    err = (net(x_i, t) - target) ** 2
    if weighting == "sigma2":
        err = err * var
    elif weighting != "none":
        raise ValueError(f"unknown loss weighting '{weighting}'")
    return err.mean()


def _as_batch(params: ScoreNetParams, x0: torch.Tensor, i: Timesteps, z0: torch.Tensor):
    x0b = _check_input(params.arch, x0)
    z0b = _check_input(params.arch, z0)
    if x0b.shape[0] == 0:
        raise ValueError("empty batch")
    if x0b.shape != z0b.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != z0 shape {tuple(z0.shape)}")
    return x0b, _timestep_tensor(i, x0b.shape[0], params.n_timesteps), z0b


def loss(
    params: ScoreNetParams,
    x0: torch.Tensor,
    i: Timesteps,
    z0: torch.Tensor,
    sched: Optional[NoiseSchedule] = None,
) -> float:
    """Mean squared gap between the Tweedie target and s_θ(perturb(x0, i, z0), i)."""
    sched = sched or params.noise_schedule()
    x0b, t, z0b = _as_batch(params, x0, i, z0)
    with torch.no_grad():
        return float(batch_loss(params.network, x0b, t, z0b, sched))


def grad_params(
    params: ScoreNetParams,
    x0: torch.Tensor,
    i: Timesteps,
    z0: torch.Tensor,
    sched: Optional[NoiseSchedule] = None,
) -> Dict[str, torch.Tensor]:
    """∂(mean loss)/∂θ over a batch, keyed like ``params.tensors``."""
    sched = sched or params.noise_schedule()
    x0b, t, z0b = _as_batch(params, x0, i, z0)
    net = params.build_module(trainable=True)
    with torch.enable_grad():
        batch_loss(net, x0b, t, z0b, sched).backward()
    grads = OrderedDict()
    for name, p in net.named_parameters():
        grads[name] = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
    return grads


def sample_prior(
    params: ScoreNetParams,
    shape: Tuple[int, int],
    n: int = 1,
    seed: int = 0,
    sched: Optional[NoiseSchedule] = None,
) -> torch.Tensor:
    """Unconditional ancestral sampling: n draws of shape (n, C, H, W)."""
    sched = sched or params.noise_schedule()
    gen = torch.Generator().manual_seed(seed)
    size = (n, params.arch.channels, int(shape[0]), int(shape[1]))
    x = torch.randn(size, generator=gen)
    with torch.no_grad():
        for i in range(sched.N, 0, -1):
            score = forward(params, x, i)
            z = torch.randn(size, generator=gen)
            x = ancestral_step(x, score, i, z, sched)
    return x
