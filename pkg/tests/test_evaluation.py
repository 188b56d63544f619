"""
Evaluation harness tests: physical-unit metrics, baselines, task runs, sweeps and
report files. Task runs use the untrained prior on 16×16 grids with N = 50.
"""
import math

import numpy as np
import pytest
import torch

from ckm_edge.core.dispatcher import build_operator
from ckm_edge.data import CkmGrid
from ckm_edge.evaluation import (
    TASKS,
    TaskConfig,
    baseline_estimate,
    dump_outcome,
    evaluate_grid,
    nearest_fill_baseline,
    parameter_sweep,
    rmse_aoa_sine,
    rmse_gain_db,
    run_task,
    write_pgm,
    write_report_json,
    write_sweep_csv,
    zeta_sweep,
)
from ckm_edge.evaluation.sweep import best_value, read_sweep_csv
from ckm_edge.operators import Downsample, MaskBox, observe
from ckm_edge.utils.path_utils import read_json


def _open_grid(gain: float, aoa: float, size: int = 4) -> CkmGrid:
    return CkmGrid(
        gain=np.full((size, size), gain),
        aoa_sine=np.full((size, size), aoa),
        building=np.zeros((size, size), dtype=bool),
    )


class TestMetrics:
    def test_gain_scaled_to_decibels(self):
        """A pixel error of 0.1 MUST read as 20 dB."""
        assert rmse_gain_db(_open_grid(0.6, 0.5), _open_grid(0.5, 0.5)) == pytest.approx(20.0, rel=1e-5)

    def test_aoa_scaled_to_sine(self):
        """A pixel error of 0.07 MUST read as 0.2 in sin θ."""
        assert rmse_aoa_sine(_open_grid(0.5, 0.57), _open_grid(0.5, 0.5)) == pytest.approx(0.2, rel=1e-5)

    def test_identical_maps_score_zero(self, synth_grids):
        assert rmse_gain_db(synth_grids[0], synth_grids[0]) == 0.0
        assert rmse_aoa_sine(synth_grids[0].to_tensor(), synth_grids[0]) == 0.0

    def test_excluding_buildings(self):
        building = np.array([[True, False], [False, False]])
        truth = CkmGrid(gain=np.where(building, 0.0, 0.5), aoa_sine=np.where(building, 0.0, 0.65), building=building)
        est = np.stack([np.full((2, 2), 0.5), np.full((2, 2), 0.65)])
        assert rmse_gain_db(est, truth, include_buildings=False) == pytest.approx(0.0)
        assert rmse_gain_db(est, truth) > 0

    def test_exclusion_needs_a_mask(self):
        x = np.zeros((2, 2, 2))
        with pytest.raises(ValueError):
            rmse_gain_db(x, x, include_buildings=False)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse_gain_db(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))


class TestBaselines:
    def test_nearest_fill(self):
        y = np.zeros((2, 1, 4))
        y[:, 0, 0] = 1.0
        y[:, 0, 3] = 3.0
        observed = np.array([[True, False, False, True]])
        filled = nearest_fill_baseline(y, observed)
        assert filled[0, 0].tolist() == [1.0, 1.0, 3.0, 3.0]

    def test_nothing_observed(self):
        with pytest.raises(ValueError):
            nearest_fill_baseline(np.zeros((2, 2, 2)), np.zeros((2, 2), dtype=bool))

    def test_downsample_baseline_upsamples(self, synth_grids):
        obs = observe(synth_grids[0], Downsample(2), sigma=0.0)
        est = baseline_estimate(obs)
        assert est.shape == (2, 16, 16)
        assert np.allclose(est[:, ::2, ::2], obs.y.numpy())

    def test_box_baseline_fills_hole(self, synth_grids):
        obs = observe(synth_grids[0], MaskBox(4, 4, 3, 3), sigma=0.0)
        est = baseline_estimate(obs)
        assert (est[:, 4:7, 4:7] != 0).any()


class TestTaskConfig:
    def test_tasks_listed(self):
        assert set(TASKS) == {"ipbox", "iprandom", "sr", "jtqr", "identity"}

    def test_unknown_task(self):
        with pytest.raises(ValueError, match="Unknown task"):
            TaskConfig(task="deblur")

    @pytest.mark.parametrize(
        "overrides",
        [{"box_side": (6, 2)}, {"mask_ratio": (0.5, 0.1)}, {"truncation": (0.7, 0.2)}, {"sigma": -1.0}, {"zeta": -2.0}],
    )
    def test_invalid_values(self, overrides):
        with pytest.raises(ValueError):
            TaskConfig(**overrides)

    def test_default_zeta_per_task(self):
        assert TaskConfig(task="ipbox").effective_zeta == 13.0
        assert TaskConfig(task="jtqr").effective_zeta == 10.0
        assert TaskConfig(task="sr", zeta=4.0).effective_zeta == 4.0

    def test_operator_specs_build(self):
        rng = np.random.default_rng(0)
        for task in TASKS:
            spec = TaskConfig(task=task).operator_spec((16, 16), rng)
            op = build_operator(spec)
            assert op.output_shape((2, 16, 16))[1:] in {(16, 16), (8, 8)}

    def test_box_never_covers_small_grid(self):
        cfg = TaskConfig(task="ipbox")
        rng = np.random.default_rng(1)
        for _ in range(200):
            spec = cfg.operator_spec((16, 16), rng)
            assert spec["h_box"] <= 15 and spec["w_box"] <= 15
            assert spec["top"] + spec["h_box"] <= 16

    @pytest.mark.parametrize("side, bounds", [(32, (1, 12)), (64, (2, 25)), (128, (5, 50))])
    def test_box_side_scales_with_grid(self, side, bounds):
        """The 5..50 box range MUST shrink with the grid, so a 32×32 box stays at most 12 cells."""
        cfg = TaskConfig(task="ipbox")
        rng = np.random.default_rng(2)
        sides = [cfg.operator_spec((side, side), rng) for _ in range(300)]
        drawn = {s["h_box"] for s in sides} | {s["w_box"] for s in sides}
        assert min(drawn) >= bounds[0] and max(drawn) <= bounds[1]
        assert max(drawn) > bounds[1] // 2


class TestRunTask:
    def test_untrained_prior_gives_finite_metrics(self, zero_params, small_schedule, synth_grids):
        report = run_task(TaskConfig(task="sr"), zero_params, small_schedule, synth_grids[:2])
        agg = report.aggregate()
        assert len(report.grids) == 2
        assert all(math.isfinite(v) for v in agg.values())
        assert report.config["N"] == 50

    def test_parallel_matches_serial(self, random_params, small_schedule, synth_grids):
        """jobs > 1 MUST NOT change any metric."""
        cfg = TaskConfig(task="iprandom", zeta=2.0)
        serial = run_task(cfg, random_params, small_schedule, synth_grids[:3], jobs=1)
        parallel = run_task(cfg, random_params, small_schedule, synth_grids[:3], jobs=2)
        assert [(g.index, g.operator) for g in serial.grids] == [(g.index, g.operator) for g in parallel.grids]
        for s, p in zip(serial.grids, parallel.grids):
            assert p.gain_rmse_db == pytest.approx(s.gain_rmse_db, rel=1e-6)
            assert p.aoa_sine_rmse == pytest.approx(s.aoa_sine_rmse, rel=1e-6)

    def test_zeta_does_not_change_operator_or_noise(self, zero_params, small_schedule, synth_grids):
        a = evaluate_grid(0, synth_grids[0], TaskConfig(task="ipbox", zeta=0.0), zero_params, small_schedule)
        b = evaluate_grid(0, synth_grids[0], TaskConfig(task="ipbox", zeta=5.0), zero_params, small_schedule)
        assert a.metrics.operator == b.metrics.operator
        assert torch.equal(a.observation.y, b.observation.y)
        assert a.metrics.baseline_gain_rmse_db == b.metrics.baseline_gain_rmse_db

    def test_callback_sees_every_grid(self, zero_params, small_schedule, synth_grids):
        seen = []
        run_task(TaskConfig(task="identity"), zero_params, small_schedule, synth_grids[:2], on_outcome=seen.append)
        assert sorted(o.metrics.index for o in seen) == [0, 1]

    def test_empty_grid_list(self, zero_params, small_schedule):
        with pytest.raises(ValueError):
            run_task(TaskConfig(), zero_params, small_schedule, [])


class TestSweep:
    def test_rows_sorted_and_deduplicated(self, tmp_path, zero_params, small_schedule, synth_grids):
        cfg = TaskConfig(task="sr")
        curve = zeta_sweep(cfg, zero_params, small_schedule, [10, 0, 5, 5.0], synth_grids[:1])
        assert list(curve) == [0.0, 5.0, 10.0]
        path = write_sweep_csv(curve, tmp_path / "sweep.csv")
        rows = read_sweep_csv(path)
        assert [r["zeta"] for r in rows] == [0.0, 5.0, 10.0]
        assert path.read_text().splitlines()[0] == "zeta,gain_rmse_db,aoa_sine_rmse"
        assert best_value(curve) in curve

    def test_too_few_points(self, zero_params, small_schedule, synth_grids):
        with pytest.raises(ValueError, match="at least 3"):
            zeta_sweep(TaskConfig(), zero_params, small_schedule, [1.0, 1.0, 2.0], synth_grids[:1])

    def test_unknown_parameter(self, zero_params, small_schedule, synth_grids):
        with pytest.raises(ValueError, match="cannot sweep"):
            parameter_sweep(TaskConfig(), zero_params, small_schedule, synth_grids[:1], "sigma", [0, 1, 2])

    def test_corrector_sweep(self, zero_params, small_schedule, synth_grids):
        curve = parameter_sweep(
            TaskConfig(task="identity", zeta=0.0), zero_params, small_schedule, synth_grids[:1], "corrector_steps", [0, 1, 2]
        )
        assert list(curve) == [0, 1, 2]
        assert curve[2].config["corrector_steps"] == 2


class TestReports:
    def test_pgm_header_and_pixels(self, tmp_path):
        plane = np.array([[0.0, 0.5, 1.0], [1.5, -1.0, 0.25]])
        data = write_pgm(plane, tmp_path / "p.pgm").read_bytes()
        header = b"P5\n3 2\n255\n"
        assert data.startswith(header)
        assert list(data[len(header):]) == [0, 128, 255, 255, 0, 64]

    def test_pgm_needs_a_plane(self, tmp_path):
        with pytest.raises(ValueError):
            write_pgm(np.zeros((2, 3, 3)), tmp_path / "p.pgm")

    def test_dump_and_report(self, tmp_path, zero_params, small_schedule, synth_grids):
        outcome = evaluate_grid(4, synth_grids[0], TaskConfig(task="sr"), zero_params, small_schedule)
        names = sorted(p.name for p in dump_outcome(outcome, tmp_path / "pgm"))
        assert "grid004_gain_truth.pgm" in names
        assert "grid004_aoa_reconstruction.pgm" in names
        assert "grid004_gain_observation.pgm" in names
        assert len(names) == 6

        report = run_task(TaskConfig(task="sr"), zero_params, small_schedule, synth_grids[:1])
        saved = read_json(write_report_json(report, tmp_path / "report.json"))
        assert saved["task"] == "sr"
        assert set(saved["aggregate"]) >= {"gain_rmse_db", "aoa_sine_rmse"}
        assert len(saved["grids"]) == 1
