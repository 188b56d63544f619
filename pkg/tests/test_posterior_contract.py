"""
Posterior sampling and construction runner contracts.

These tests define how the predictor-corrector-constraint sampler SHOULD behave
on tiny networks: step-size rule, constraint update, determinism and the
degenerate cases that must reduce to prior sampling.
"""
import math

import pytest
import torch

pytestmark = pytest.mark.contract

from ckm_edge.core import ConstructionRunner, PosteriorConfig, dps_sample, epsilon_schedule, observation_constraint_step, posterior
from ckm_edge.core.dispatcher import save_observation
from ckm_edge.data import load_grid
from ckm_edge.diffusion import make_schedule, sample_prior, save_weights
from ckm_edge.diffusion.sde import langevin_step
from ckm_edge.operators import Downsample, Identity, MaskRandom, Observation, observe
from ckm_edge.utils.path_utils import read_json

from tests.conftest import GRID_SIZE


class TestPosteriorConfig:
    @pytest.mark.parametrize(
        "overrides", [{"corrector_steps": -1}, {"zeta": -0.5}, {"snr": 0.0}, {"sigma": -0.1}]
    )
    def test_invalid_values(self, overrides):
        with pytest.raises(ValueError):
            PosteriorConfig(**overrides)

    def test_defaults(self):
        cfg = PosteriorConfig()
        assert (cfg.zeta, cfg.corrector_steps, cfg.snr) == (13.0, 1, 0.16)


class TestEpsilonSchedule:
    def test_closed_form(self):
        """ε MUST equal 2·(snr·‖z‖/‖s‖)²."""
        x = torch.zeros(2, 4, 4)
        eps = epsilon_schedule(x, torch.full((2, 4, 4), 2.0), 0.16, z_ref=torch.ones(2, 4, 4))
        assert eps == pytest.approx(2.0 * 0.08 ** 2)

    def test_zero_score_hits_floor(self):
        assert epsilon_schedule(torch.zeros(4), torch.zeros(4), 0.16, z_ref=torch.ones(4)) == 1e-8

    def test_tiny_ratio_is_floored(self):
        eps = epsilon_schedule(torch.zeros(4), torch.full((4,), 1e9), 0.16, z_ref=torch.full((4,), 1e-3))
        assert eps == 1e-8

    def test_generator_used_when_no_reference(self):
        a = epsilon_schedule(torch.zeros(8), torch.ones(8), 0.2, generator=torch.Generator().manual_seed(1))
        b = epsilon_schedule(torch.zeros(8), torch.ones(8), 0.2, generator=torch.Generator().manual_seed(1))
        assert a == b


class TestConstraintStep:
    def _setup(self, small_schedule, i=20):
        gen = torch.Generator().manual_seed(0)
        x_i = torch.randn((2, GRID_SIZE, GRID_SIZE), generator=gen)
        y = torch.rand((2, GRID_SIZE, GRID_SIZE), generator=gen)
        obs = Observation(y=y, operator=Identity(), sigma=0.0, grid_shape=(GRID_SIZE, GRID_SIZE))
        return x_i, obs, math.sqrt(small_schedule.alpha_bar_at(i))

    def test_zeta_zero_is_identity(self, zero_params, small_schedule):
        x_i, obs, _ = self._setup(small_schedule)
        x_prime = torch.randn(x_i.shape)
        out = observation_constraint_step(x_prime, x_i, zero_params, small_schedule, 20, obs, 0.0)
        assert torch.equal(out, x_prime)

    def test_normalised_gradient_update(self, zero_params, small_schedule):
        """With a zero score, x̂₀ = x_i/√ᾱ and the update is 2ζ·r/(√ᾱ‖r‖)."""
        x_i, obs, root = self._setup(small_schedule)
        x_prime = torch.zeros_like(x_i)
        r = obs.y - x_i / root
        expected = 2.0 * 1.5 * r / (root * torch.linalg.vector_norm(r))
        out = observation_constraint_step(x_prime, x_i, zero_params, small_schedule, 20, obs, 1.5)
        assert torch.allclose(out, expected, atol=1e-5)

    def test_vanishing_residual_skips_update(self, zero_params, small_schedule):
        x_i, _, root = self._setup(small_schedule)
        obs = Observation(y=x_i / root, operator=Identity(), sigma=0.0, grid_shape=(GRID_SIZE, GRID_SIZE))
        x_prime = torch.randn(x_i.shape)
        out = observation_constraint_step(x_prime, x_i, zero_params, small_schedule, 20, obs, 5.0)
        assert torch.equal(out, x_prime)


class TestDpsSample:
    def _obs(self, grid, op=None):
        return observe(grid, op or Downsample(2), sigma=0.01, seed=0)

    def test_deterministic_for_seed(self, random_params, small_schedule, synth_grids):
        obs = self._obs(synth_grids[0])
        cfg = PosteriorConfig(zeta=2.0, seed=3)
        a = dps_sample(random_params, small_schedule, obs, cfg)
        b = dps_sample(random_params, small_schedule, obs, cfg)
        assert torch.equal(a.x_hat, b.x_hat)
        assert a.residual_trace == b.residual_trace
        assert len(a.residual_trace) == small_schedule.N

    def test_seed_changes_result(self, random_params, small_schedule, synth_grids):
        obs = self._obs(synth_grids[0])
        a = dps_sample(random_params, small_schedule, obs, PosteriorConfig(zeta=2.0, seed=0))
        b = dps_sample(random_params, small_schedule, obs, PosteriorConfig(zeta=2.0, seed=1))
        assert not torch.equal(a.x_hat, b.x_hat)

    def test_unconstrained_without_corrector_is_prior_sampling(self, random_params, small_schedule, synth_grids):
        """ζ = 0 and M = 0 MUST reproduce unconditional ancestral sampling."""
        obs = self._obs(synth_grids[0])
        result = dps_sample(random_params, small_schedule, obs, PosteriorConfig(zeta=0.0, corrector_steps=0, seed=9))
        prior = sample_prior(random_params, (GRID_SIZE, GRID_SIZE), n=1, seed=9, sched=small_schedule)[0]
        assert torch.allclose(result.x_hat, prior, atol=1e-5)

    def test_constraint_pulls_towards_measurement(self, zero_params, small_schedule, synth_grids):
        obs = observe(synth_grids[1], Identity(), sigma=0.0)
        free = dps_sample(zero_params, small_schedule, obs, PosteriorConfig(zeta=0.0, seed=0))
        pulled = dps_sample(zero_params, small_schedule, obs, PosteriorConfig(zeta=1.0, seed=0))
        assert pulled.residual_trace[-1] < 0.5 * free.residual_trace[-1]

    def test_detached_score_changes_gradient(self, random_params, small_schedule, synth_grids):
        obs = self._obs(synth_grids[0], MaskRandom(0.3))
        full = dps_sample(random_params, small_schedule, obs, PosteriorConfig(zeta=1.0, seed=0))
        detached = dps_sample(random_params, small_schedule, obs, PosteriorConfig(zeta=1.0, seed=0, detach_score=True))
        assert not torch.equal(full.x_hat, detached.x_hat)
        assert detached.config["detach_score"] is True

    def test_corrector_step_size_uses_fresh_reference_noise(self, monkeypatch, random_params, small_schedule, synth_grids):
        """ε MUST come from its own reference draw, not from the Langevin update noise z."""
        calls = []

        def recording(x, score, eps, z):
            calls.append((float(torch.linalg.vector_norm(score)), eps, float(torch.linalg.vector_norm(z))))
            return langevin_step(x, score, eps, z)

        monkeypatch.setattr(posterior, "langevin_step", recording)
        cfg = PosteriorConfig(zeta=0.0, seed=4)
        dps_sample(random_params, small_schedule, self._obs(synth_grids[0]), cfg)
        assert len(calls) == small_schedule.N
        for s_norm, eps, z_norm in calls:
            assert not math.isclose(eps, 2.0 * (cfg.snr * z_norm / s_norm) ** 2, rel_tol=1e-9)

    def test_schedule_mismatch(self, zero_params, synth_grids):
        with pytest.raises(ValueError, match="N=50"):
            dps_sample(zero_params, make_schedule(60), self._obs(synth_grids[0]), PosteriorConfig())

    def test_grid_divisibility(self, zero_params, small_schedule):
        obs = Observation(y=torch.zeros(2, 18, 18), operator=Identity(), sigma=0.0, grid_shape=(18, 18))
        with pytest.raises(ValueError, match="divisible"):
            dps_sample(zero_params, small_schedule, obs, PosteriorConfig())

    def test_result_projects_to_valid_grid(self, random_params, small_schedule, synth_grids):
        result = dps_sample(random_params, small_schedule, self._obs(synth_grids[0]), PosteriorConfig(zeta=1.0))
        grid = result.to_grid()
        assert grid.shape == (GRID_SIZE, GRID_SIZE)
        assert result.config["operator"] == {"kind": "downsample", "scale": 2}
        assert result.config["N"] == 50
        assert all(math.isfinite(r) for r in result.residual_trace)


class TestConstructionRunner:
    def test_run_writes_grid_and_sidecar(self, tmp_path, random_params, synth_grids):
        obs = observe(synth_grids[0], Downsample(2), sigma=0.01)
        runner = ConstructionRunner(random_params, obs, PosteriorConfig(zeta=1.0), out_path=tmp_path / "rec.ckmg")
        result = runner.run()
        assert load_grid(runner.save_to) == result.to_grid()
        sidecar = read_json(runner.sidecar_path)
        assert len(sidecar["residual_trace"]) == 50
        assert sidecar["config"]["weights_sha256"] == random_params.checksum()
        assert sidecar["runtime_ms"] > 0

    def test_auto_numbered_output(self, tmp_path, zero_params, synth_grids):
        obs = observe(synth_grids[0], Identity(), sigma=0.0)
        runner = ConstructionRunner(zero_params, obs, PosteriorConfig(zeta=0.0), outputs_dir=tmp_path)
        runner.run()
        assert runner.save_to.parent.parent == tmp_path
        assert runner.save_to.suffix == ".ckmg"
        assert runner.save_to.exists()

    def test_no_save(self, zero_params, synth_grids):
        obs = observe(synth_grids[0], Identity(), sigma=0.0)
        runner = ConstructionRunner(zero_params, obs, PosteriorConfig(zeta=0.0), save=False)
        runner.run()
        assert runner.save_to is None and runner.result is not None

    def test_from_files_with_operator_override(self, tmp_path, zero_params, synth_grids):
        weights = save_weights(zero_params, tmp_path / "prior.ckmw")
        obs_path = save_observation(observe(synth_grids[0], Identity(), sigma=0.0), tmp_path / "obs.ckmo")
        runner = ConstructionRunner.from_files(
            weights,
            obs_path,
            PosteriorConfig(zeta=1.0),
            operator_spec={"kind": "iprandom", "ratio": 0.2},
            out_path=tmp_path / "out.ckmg",
        )
        result = runner.run()
        assert result.config["operator"]["kind"] == "mask_random"
        assert (tmp_path / "out.json").is_file()
