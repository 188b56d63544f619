"""Posterior sampling engine, operator registry and the construction runner."""

from ckm_edge.core.dispatcher import (
    build_operator,
    default_zeta,
    list_operator_kinds,
    load_observation,
    parse_operator_json,
    save_observation,
)
from ckm_edge.core.posterior import (
    ConstructionResult,
    PosteriorConfig,
    dps_sample,
    epsilon_schedule,
    observation_constraint_step,
)
from ckm_edge.core.runner import ConstructionRunner

__all__ = [
    "ConstructionResult",
    "ConstructionRunner",
    "PosteriorConfig",
    "build_operator",
    "default_zeta",
    "dps_sample",
    "epsilon_schedule",
    "list_operator_kinds",
    "load_observation",
    "observation_constraint_step",
    "parse_operator_json",
    "save_observation",
]
