"""Time-conditioned U-Net score network.

Three resolutions (by default), two conv blocks per resolution, 2× average-pool
down and nearest-neighbour up with skip concatenation. Each block is
conv 3×3 → GroupNorm → per-channel scale/shift from the timestep embedding → SiLU.
The output conv is zero-initialised, so an untrained network returns 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import torch
import torch.nn.functional as F
from torch import nn

__all__ = ["ArchDescriptor", "ScoreUNet", "timestep_embedding"]


@dataclass(frozen=True)
class ArchDescriptor:
    channels: int = 2
    base_width: int = 32
    channel_mult: Tuple[int, ...] = (1, 2, 2)
    emb_dim: int = 64
    groups: int = 8
    blocks: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel_mult", tuple(int(m) for m in self.channel_mult))
        if self.channels < 1 or self.base_width < 1 or not self.channel_mult:
            raise ValueError(f"invalid architecture {self}")
        if self.emb_dim < 2 or self.emb_dim % 2:
            raise ValueError(f"emb_dim must be even and >= 2, got {self.emb_dim}")
        for width in self.widths:
            if width % self.groups:
                raise ValueError(f"width {width} not divisible by {self.groups} groups")

    @property
    def widths(self) -> List[int]:
        return [self.base_width * m for m in self.channel_mult]

    @property
    def divisor(self) -> int:
        """Spatial dims must be divisible by this (one halving per extra level)."""
        return 2 ** (len(self.channel_mult) - 1)

    def to_string(self) -> str:
        mult = "-".join(str(m) for m in self.channel_mult)
        return (
            f"unet:ch={self.channels},base={self.base_width},mult={mult},"
            f"emb={self.emb_dim},groups={self.groups},blocks={self.blocks}"
        )

    @classmethod
    def parse(cls, text: str) -> "ArchDescriptor":
        kind, _, body = text.partition(":")
        if kind != "unet" or not body:
            raise ValueError(f"unknown architecture descriptor '{text}'")
        try:
            fields = dict(item.split("=", 1) for item in body.split(","))
            return cls(
                channels=int(fields["ch"]),
                base_width=int(fields["base"]),
                channel_mult=tuple(int(m) for m in fields["mult"].split("-")),
                emb_dim=int(fields["emb"]),
                groups=int(fields["groups"]),
                blocks=int(fields.get("blocks", 2)),
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"malformed architecture descriptor '{text}': {exc}") from exc


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of (integer) timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.to(torch.float32)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, groups: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1)
        self.norm = nn.GroupNorm(groups, out_ch)
        self.film = nn.Linear(emb_dim, 2 * out_ch)

    def forward(self, h: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.norm(self.conv(h))
        scale, shift = self.film(F.silu(temb)).chunk(2, dim=1)
        h = h * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
        return F.silu(h)


class _Stage(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, arch: ArchDescriptor) -> None:
        super().__init__()
        chans = [in_ch] + [out_ch] * arch.blocks
        self.blocks = nn.ModuleList(
            ConvBlock(chans[k], chans[k + 1], arch.emb_dim, arch.groups) for k in range(arch.blocks)
        )

    def forward(self, h: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            h = block(h, temb)
        return h


class ScoreUNet(nn.Module):
    """s_θ(x, i): maps a (B, C, H, W) state and (B,) timesteps to a same-shaped score."""

    def __init__(self, arch: ArchDescriptor) -> None:
        super().__init__()
        self.arch = arch
        widths = arch.widths
        self.temb = nn.Sequential(
            nn.Linear(arch.emb_dim, arch.emb_dim),
            nn.SiLU(),
            nn.Linear(arch.emb_dim, arch.emb_dim),
        )
        self.inp = nn.Conv2d(arch.channels, widths[0], kernel_size=3, padding=1)
        self.down = nn.ModuleList()
        prev = widths[0]
        for width in widths:
            self.down.append(_Stage(prev, width, arch))
            prev = width
        self.up = nn.ModuleList()
        for level in range(len(widths) - 2, -1, -1):
            self.up.append(_Stage(prev + widths[level], widths[level], arch))
            prev = widths[level]
        self.out = nn.Conv2d(widths[0], arch.channels, kernel_size=3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.temb(timestep_embedding(t, self.arch.emb_dim))
        h = self.inp(x)
        skips = []
        last = len(self.down) - 1
        for level, stage in enumerate(self.down):
            h = stage(h, temb)
            if level < last:
                skips.append(h)
                h = F.avg_pool2d(h, 2)
        for stage in self.up:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = stage(torch.cat([h, skips.pop()], dim=1), temb)
        return self.out(h)
