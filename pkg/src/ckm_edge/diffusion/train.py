"""Cloud-side training loop for the score prior.

Each step draws a minibatch, timesteps uniformly from {1..N} and Gaussian noise,
regresses the network onto the Tweedie score target and takes one Adam step.
An exponential moving average of the weights is what gets returned.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

import torch
from tqdm import tqdm

from ckm_edge.data.grid import CkmGrid
from ckm_edge.diffusion.network import ArchDescriptor
from ckm_edge.diffusion.schedule import NoiseSchedule
from ckm_edge.diffusion.score_model import ScoreNetParams, batch_loss, init_params
from ckm_edge.errors import NumericalError
from ckm_edge.utils.logger import get_logger

__all__ = ["TrainConfig", "TrainLogEntry", "train", "stack_grids"]

logger = get_logger(__name__)

LossCallback = Callable[["TrainLogEntry"], None]
CheckpointCallback = Callable[[ScoreNetParams], None]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    steps: int = 20000
    learning_rate: float = 2.0e-4
    ema_decay: float = 0.999
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables checkpoints
    log_every: int = 50
    weighting: str = "none"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if self.checkpoint_every < 0 or self.log_every < 1:
            raise ValueError("checkpoint_every must be >= 0 and log_every >= 1")
        if self.weighting not in ("none", "sigma2"):
            raise ValueError(f"weighting must be 'none' or 'sigma2', got '{self.weighting}'")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass(frozen=True)
class TrainLogEntry:
    step: int
    loss: float
    running_loss: float


def stack_grids(dataset: Sequence[Union[CkmGrid, torch.Tensor]]) -> torch.Tensor:
    """(n, 2, H, W) float32 tensor from grids or 2×H×W tensors of one shape."""
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    items = [g.to_tensor() if isinstance(g, CkmGrid) else torch.as_tensor(g, dtype=torch.float32) for g in dataset]
    shapes = {tuple(t.shape) for t in items}
    if len(shapes) != 1:
        raise ValueError(f"training grids must share one shape, got {sorted(shapes)}")
    return torch.stack(items)


def train(
    dataset: Union[Sequence[CkmGrid], torch.Tensor],
    sched: NoiseSchedule,
    cfg: TrainConfig,
    arch: Optional[ArchDescriptor] = None,
    init: Optional[ScoreNetParams] = None,
    on_log: Optional[LossCallback] = None,
    on_checkpoint: Optional[CheckpointCallback] = None,
    progress: bool = False,
) -> ScoreNetParams:
    """Run ``cfg.steps`` optimisation steps and return the EMA weights.

    ``init`` resumes from existing parameters (its schedule must match ``sched``);
    otherwise a fresh network is initialised from ``arch`` under ``cfg.seed``.
    Deterministic for a given seed, dataset and config.
    """
    data = dataset if isinstance(dataset, torch.Tensor) else stack_grids(dataset)
    data = data.to(torch.float32)
    if data.dim() != 4 or data.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, C, H, W) dataset, got {tuple(data.shape)}")

    if init is not None:
        if init.schedule.get("N") != sched.N or abs(float(init.schedule["beta_max"]) - sched.beta_max) > 1e-12:
            raise ValueError(f"initial weights were trained with schedule {init.schedule}, not {sched.meta()}")
        start = init
    else:
        start = init_params(arch or ArchDescriptor(), sched, seed=cfg.seed)
    arch = start.arch
    if data.shape[1] != arch.channels:
        raise ValueError(f"dataset has {data.shape[1]} channels, network expects {arch.channels}")

    gen = torch.Generator().manual_seed(cfg.seed)
    net = start.build_module(trainable=True)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    ema: Dict[str, torch.Tensor] = OrderedDict((k, v.detach().clone()) for k, v in net.state_dict().items())
    n, N = data.shape[0], sched.N
    window: List[float] = []
    window_len = max(1, cfg.steps // 10)

    logger.info(
        "training score prior",
        extra={"fields": {"arch": arch.to_string(), "samples": n, "N": N, **cfg.to_dict()}},
    )

    def snapshot(done: int) -> ScoreNetParams:
        return ScoreNetParams(arch=arch, schedule=sched.meta(), tensors=ema, trained_steps=start.trained_steps + done)

    steps = tqdm(range(1, cfg.steps + 1), desc="train", disable=not progress, leave=False)
    for step in steps:
        idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
        t = torch.randint(1, N + 1, (cfg.batch_size,), generator=gen)
        x0 = data[idx]
        z0 = torch.randn(x0.shape, generator=gen)

        loss = batch_loss(net, x0, t, z0, sched, weighting=cfg.weighting)
        value = float(loss.detach())
        if not torch.isfinite(loss):
            last = window[-1] if window else float("nan")
            raise NumericalError(
                f"training diverged at step {step}: loss={value} (previous {last:.6g})",
                hint="lower --lr or check the dataset for non-finite pixels",
            )
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        decay = min(cfg.ema_decay, (1.0 + step) / (10.0 + step))
        with torch.no_grad():
            for name, value_t in net.state_dict().items():
                ema[name].mul_(decay).add_(value_t, alpha=1.0 - decay)

        window.append(value)
        if len(window) > window_len:
            window.pop(0)
        if step % cfg.log_every == 0 or step == cfg.steps:
            entry = TrainLogEntry(step=step, loss=value, running_loss=sum(window) / len(window))
            steps.set_postfix(loss=f"{entry.running_loss:.4g}")
            logger.debug("train step", extra={"fields": asdict(entry)})
            if on_log is not None:
                on_log(entry)
        if on_checkpoint is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            on_checkpoint(snapshot(step))

    params = snapshot(cfg.steps)
    logger.info(
        "training finished",
        extra={"fields": {"steps": params.trained_steps, "running_loss": sum(window) / len(window)}},
    )
    return params
