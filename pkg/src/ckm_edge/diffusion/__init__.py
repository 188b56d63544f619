"""VP-SDE score prior: schedule, kernels, network, training and weights I/O."""

from ckm_edge.diffusion.network import ArchDescriptor, ScoreUNet
from ckm_edge.diffusion.schedule import NoiseSchedule, make_schedule
from ckm_edge.diffusion.score_model import (
    ScoreNetParams,
    forward,
    grad_params,
    init_params,
    loss,
    sample_prior,
    vjp_input,
)
from ckm_edge.diffusion.sde import (
    ancestral_step,
    langevin_step,
    perturb,
    progressive_estimate,
    score_from_noise,
)
from ckm_edge.diffusion.train import TrainConfig, TrainLogEntry, train
from ckm_edge.diffusion.weights import load_weights, save_weights, weights_from_bytes, weights_to_bytes

__all__ = [
    "ArchDescriptor",
    "NoiseSchedule",
    "ScoreNetParams",
    "ScoreUNet",
    "TrainConfig",
    "TrainLogEntry",
    "ancestral_step",
    "forward",
    "grad_params",
    "init_params",
    "langevin_step",
    "load_weights",
    "loss",
    "make_schedule",
    "perturb",
    "progressive_estimate",
    "sample_prior",
    "save_weights",
    "score_from_noise",
    "train",
    "vjp_input",
    "weights_from_bytes",
    "weights_to_bytes",
]
