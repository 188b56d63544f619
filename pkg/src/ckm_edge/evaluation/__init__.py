"""Task configurations, physical-unit RMSE, ζ sweeps and reports."""

from ckm_edge.evaluation.baselines import baseline_estimate, nearest_fill_baseline
from ckm_edge.evaluation.metrics import rmse_aoa_sine, rmse_gain_db
from ckm_edge.evaluation.report import dump_outcome, write_pgm, write_report_json
from ckm_edge.evaluation.sweep import parameter_sweep, write_sweep_csv, zeta_sweep
from ckm_edge.evaluation.tasks import TASKS, GridMetrics, MetricsReport, TaskConfig, evaluate_grid, run_task

__all__ = [
    "TASKS",
    "GridMetrics",
    "MetricsReport",
    "TaskConfig",
    "baseline_estimate",
    "dump_outcome",
    "evaluate_grid",
    "nearest_fill_baseline",
    "parameter_sweep",
    "rmse_aoa_sine",
    "rmse_gain_db",
    "run_task",
    "write_pgm",
    "write_report_json",
    "write_sweep_csv",
    "zeta_sweep",
]
