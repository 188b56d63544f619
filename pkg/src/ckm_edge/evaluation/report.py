"""Report files: JSON metrics and PGM image dumps."""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from ckm_edge.data.grid import AOA, GAIN
from ckm_edge.evaluation.tasks import GridOutcome, MetricsReport
from ckm_edge.utils.path_utils import atomic_write_bytes, ensure_dir, write_json

__all__ = ["write_report_json", "write_pgm", "dump_outcome"]


def write_report_json(report: MetricsReport, path: Path) -> Path:
    return write_json(Path(path), report.to_dict())


def write_pgm(plane: np.ndarray, path: Path) -> Path:
    """8-bit binary PGM (P5) of a [0, 1] pixel plane; values outside are clipped."""
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D plane, got shape {arr.shape}")
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    return atomic_write_bytes(Path(path), header + data.tobytes())


def dump_outcome(outcome: GridOutcome, directory: Path) -> List[Path]:
    """observation / truth / reconstruction planes for both channels of one grid."""
    directory = ensure_dir(Path(directory))
    idx = outcome.metrics.index
    y = outcome.observation.y.numpy()
    planes = {
        "observation": y,
        "truth": np.stack([outcome.truth.gain, outcome.truth.aoa_sine]),
        "reconstruction": np.stack([outcome.reconstruction.gain, outcome.reconstruction.aoa_sine]),
    }
    written = []
    for label, arr in planes.items():
        channels = {"gain": GAIN, "aoa": AOA} if arr.shape[0] == 2 else {"y": 0}
        for cname, c in channels.items():
            written.append(write_pgm(arr[c], directory / f"grid{idx:03d}_{cname}_{label}.pgm"))
    return written
