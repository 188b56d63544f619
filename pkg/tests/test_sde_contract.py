"""
VP noise schedule and SDE kernel contracts.

The moment and Gaussian-oracle tests pin the kernels to their closed forms; any
sampler built on top inherits correctness from here.
"""
import math

import numpy as np
import pytest
import torch

pytestmark = pytest.mark.contract

from ckm_edge.diffusion import NoiseSchedule, make_schedule
from ckm_edge.diffusion.sde import ancestral_step, langevin_step, perturb, progressive_estimate, score_from_noise


class TestSchedule:
    def test_default_ramp_for_1000_steps(self):
        sched = make_schedule(1000)
        assert sched.beta_at(1) == pytest.approx(1e-4)
        assert sched.beta_at(1000) == pytest.approx(0.02)

    def test_short_chain_scales_endpoints(self):
        sched = make_schedule(50)
        assert sched.beta_min == pytest.approx(0.1 / 50)
        assert sched.beta_max == pytest.approx(20.0 / 50)
        assert sched.alpha_bar_at(50) < 0.01

    def test_alpha_bar_is_cumulative_product(self):
        sched = make_schedule(100)
        assert sched.alpha_bar_at(0) == 1.0
        assert sched.alpha_bar_at(3) == pytest.approx(np.prod(1.0 - sched.beta[:3]))
        assert np.all(np.diff(sched.alpha_bar) < 0)

    def test_arrays_are_read_only(self):
        sched = make_schedule(20)
        with pytest.raises(ValueError):
            sched.beta[0] = 0.5

    @pytest.mark.parametrize("i", [0, 51])
    def test_timestep_range(self, small_schedule, i):
        with pytest.raises(ValueError):
            small_schedule.beta_at(i)

    def test_too_few_steps_rejected(self):
        with pytest.raises(ValueError):
            make_schedule(9)

    def test_schedule_that_does_not_reach_noise_rejected(self):
        """Terminal alpha_bar MUST be below 0.01."""
        with pytest.raises(ValueError, match="terminal"):
            make_schedule(10, 1e-4, 1e-3)

    def test_meta_round_trip(self, small_schedule):
        back = NoiseSchedule.from_meta(small_schedule.meta())
        assert back.N == 50
        assert np.array_equal(back.alpha_bar, small_schedule.alpha_bar)

    def test_unknown_family_rejected(self, small_schedule):
        meta = dict(small_schedule.meta(), family="VE")
        with pytest.raises(ValueError):
            NoiseSchedule.from_meta(meta)


class TestPerturbationKernel:
    @pytest.mark.parametrize("i", [1, 25, 50])
    def test_moments(self, small_schedule, i):
        """perturb MUST have mean √ᾱ·x0 and variance 1-ᾱ (2% on 10^4 draws per pixel)."""
        gen = torch.Generator().manual_seed(i)
        x0 = torch.rand((1, 2, 8, 8), generator=gen, dtype=torch.float64).expand(10_000, -1, -1, -1)
        z0 = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
        abar = small_schedule.alpha_bar_at(i)
        resid = perturb(x0, i, z0, small_schedule) - math.sqrt(abar) * x0
        assert float(resid.mean()) == pytest.approx(0.0, abs=0.02 * math.sqrt(1.0 - abar))
        assert float(resid.var()) == pytest.approx(1.0 - abar, rel=0.02)

    def test_timestep_zero_is_identity(self, small_schedule):
        x0 = torch.rand(2, 4, 4)
        assert torch.equal(perturb(x0, 0, torch.randn(2, 4, 4), small_schedule), x0)

    def test_shape_mismatch(self, small_schedule):
        with pytest.raises(ValueError):
            perturb(torch.zeros(2, 4, 4), 1, torch.zeros(2, 4, 5), small_schedule)

    @pytest.mark.parametrize("i", [1, 10, 50])
    def test_tweedie_round_trip(self, small_schedule, i):
        """Exact score plugged into progressive_estimate MUST recover x0."""
        gen = torch.Generator().manual_seed(0)
        x0 = torch.rand((2, 8, 8), generator=gen, dtype=torch.float64)
        z0 = torch.randn((2, 8, 8), generator=gen, dtype=torch.float64)
        x_i = perturb(x0, i, z0, small_schedule)
        est = progressive_estimate(x_i, score_from_noise(z0, i, small_schedule), i, small_schedule)
        assert torch.allclose(est, x0, atol=1e-5)

    def test_score_undefined_at_zero(self, small_schedule):
        with pytest.raises(ValueError):
            score_from_noise(torch.zeros(1), 0, small_schedule)


class TestReverseSteps:
    def test_last_step_is_noise_free(self, small_schedule):
        x = torch.randn(2, 4, 4)
        score = torch.randn(2, 4, 4)
        a = ancestral_step(x, score, 1, torch.randn(2, 4, 4), small_schedule)
        b = ancestral_step(x, score, 1, torch.randn(2, 4, 4), small_schedule)
        assert torch.equal(a, b)

    def test_ancestral_closed_form(self, small_schedule):
        x, score, z = torch.ones(3), torch.full((3,), 0.5), torch.full((3,), -1.0)
        i = 20
        alpha, abar, prev = (
            small_schedule.alpha_at(i),
            small_schedule.alpha_bar_at(i),
            small_schedule.alpha_bar_at(i - 1),
        )
        expected = (
            1.0 / math.sqrt(alpha)
            + (1.0 - alpha) / math.sqrt(alpha) * 0.5
            - math.sqrt((1.0 - alpha) * (1.0 - prev) / (1.0 - abar))
        )
        assert torch.allclose(ancestral_step(x, score, i, z, small_schedule), torch.full((3,), expected))

    def test_langevin_needs_positive_step(self):
        with pytest.raises(ValueError):
            langevin_step(torch.zeros(2), torch.zeros(2), 0.0, torch.zeros(2))


class TestGaussianOracle:
    """With data N(0, 1) the VP marginals stay N(0, 1) and the exact score is -x."""

    def test_ancestral_chain_recovers_unit_variance(self):
        sched = make_schedule(1000)
        gen = torch.Generator().manual_seed(3)
        x = torch.randn(40_000, generator=gen, dtype=torch.float64)
        for i in range(sched.N, 0, -1):
            x = ancestral_step(x, -x, i, torch.randn(x.shape, generator=gen, dtype=torch.float64), sched)
        assert float(x.mean()) == pytest.approx(0.0, abs=0.02)
        assert float(x.var()) == pytest.approx(1.0, rel=0.05)

    def test_langevin_keeps_the_target(self):
        gen = torch.Generator().manual_seed(4)
        x = torch.randn(40_000, generator=gen, dtype=torch.float64)
        for _ in range(200):
            x = langevin_step(x, -x, 0.01, torch.randn(x.shape, generator=gen, dtype=torch.float64))
        assert float(x.var()) == pytest.approx(1.0, rel=0.05)
