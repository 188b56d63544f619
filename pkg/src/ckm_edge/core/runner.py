"""ConstructionRunner orchestrates one edge-side reconstruction.

Responsibilities:
    * Hold the prior weights, the observation (y, A, σ) and the sampler config.
    * Run posterior sampling and project the estimate onto a valid grid.
    * Persist the CKMG result plus a JSON sidecar {residual_trace, config, runtime_ms}.

Non-goals:
    * Fetching weights (see ``ckm_edge.cloud.client``).
    * Averaging many posterior samples.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from ckm_edge.core.dispatcher import load_observation
from ckm_edge.core.posterior import ConstructionResult, PosteriorConfig, dps_sample
from ckm_edge.data.io import save_grid
from ckm_edge.diffusion.score_model import ScoreNetParams
from ckm_edge.diffusion.weights import load_weights
from ckm_edge.operators.base import Observation
from ckm_edge.utils.logger import get_logger, timed
from ckm_edge.utils.path_utils import get_output_path, write_json

logger = get_logger(__name__)


class ConstructionRunner:
    """Build and execute a single construction run.

    Instances are lightweight; create a new runner per observation.

    Args:
        params: prior weights
        observation: y together with its operator and σ
        cfg: sampler configuration
        out_path: CKMG destination; defaults to ``<outputs>/construct/<stem>_<n>.ckmg``
        outputs_dir: root for auto-numbered outputs
        stem: file stem for auto-numbered outputs
        save: write the grid and sidecar
    """

    def __init__(
        self,
        params: ScoreNetParams,
        observation: Observation,
        cfg: PosteriorConfig,
        out_path: Optional[Path] = None,
        outputs_dir: Path = Path("outputs"),
        stem: str = "construct",
        save: bool = True,
    ) -> None:
        self.params = params
        self.sched = params.noise_schedule()
        self.observation = observation
        self.cfg = cfg
        self.save = bool(save)
        self.save_to: Optional[Path] = None
        if self.save:
            self.save_to = Path(out_path) if out_path else get_output_path(outputs_dir, "construct", stem, ".ckmg")
        self.result: Optional[ConstructionResult] = None

    @classmethod
    def from_files(
        cls,
        weights_path: Path,
        observation_path: Path,
        cfg: PosteriorConfig,
        operator_spec: Optional[Mapping[str, Any]] = None,
        **kwargs: Any,
    ) -> "ConstructionRunner":
        """Load CKMW weights and a CKMO observation; ``operator_spec`` overrides the stored operator."""
        params = load_weights(weights_path)
        observation = load_observation(observation_path, spec=operator_spec)
        return cls(params, observation, cfg, **kwargs)

    @property
    def sidecar_path(self) -> Optional[Path]:
        return self.save_to.with_suffix(".json") if self.save_to else None

    # Public API -----------------------------------------------------------------
    def run(self) -> ConstructionResult:
        op = self.observation.operator
        logger.info(
            "constructing",
            extra={"fields": {"operator": op.to_spec(), "zeta": self.cfg.zeta, "M": self.cfg.corrector_steps, "seed": self.cfg.seed}},
        )
        with timed(logger, "posterior sampling"):
            self.result = dps_sample(self.params, self.sched, self.observation, self.cfg)
        if self.save and self.save_to:
            self._persist_artifacts(self.result)
        return self.result

    # Internal helpers -----------------------------------------------------------
    def _persist_artifacts(self, result: ConstructionResult) -> None:
        save_grid(result.to_grid(), self.save_to)
        sidecar: Dict[str, Any] = result.sidecar()
        sidecar["config"] = {**sidecar["config"], "weights": self.params.descriptor(), "weights_sha256": self.params.checksum()}
        write_json(self.sidecar_path, sidecar)
        logger.info("wrote construction", extra={"fields": {"grid": str(self.save_to), "sidecar": str(self.sidecar_path)}})
