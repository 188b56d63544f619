"""Dataset directories and region-disjoint splitting.

A dataset directory holds one CKMG file per grid plus ``manifest.json`` (files,
region ids, generator parameters) and, when split, ``split.json`` (train/test file
lists). Grids sharing a region id always land on the same side of a split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ckm_edge.data.grid import CkmGrid
from ckm_edge.data.io import load_grid, save_grid
from ckm_edge.utils.logger import get_logger
from ckm_edge.utils.path_utils import ensure_dir, read_json, write_json

__all__ = [
    "DatasetSplit",
    "split_regions",
    "save_dataset",
    "load_dataset",
    "convert_ckmimagenet",
    "MANIFEST_NAME",
    "SPLIT_NAME",
]

MANIFEST_NAME = "manifest.json"
SPLIT_NAME = "split.json"

log = get_logger(__name__)


@dataclass(frozen=True)
class DatasetSplit:
    train: List[CkmGrid]
    test: List[CkmGrid]
    train_regions: Tuple[str, ...] = field(default=())
    test_regions: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        overlap = set(self.train_regions) & set(self.test_regions)
        if overlap:
            raise ValueError(f"regions appear in both train and test: {sorted(overlap)}")

    @property
    def region_ids(self) -> Dict[str, List[str]]:
        return {"train": list(self.train_regions), "test": list(self.test_regions)}


def _region_of(grid: CkmGrid, index: int) -> str:
    return grid.region_id or f"grid-{index:05d}"


def split_regions(grids: Sequence[CkmGrid], ratio: float, seed: int) -> DatasetSplit:
    """Shuffle regions with ``seed`` and send ``floor(ratio · regions)`` of them to train."""
    if len(grids) < 2:
        raise ValueError(f"need at least 2 grids to split, got {len(grids)}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")

    by_region: Dict[str, List[int]] = {}
    for idx, grid in enumerate(grids):
        by_region.setdefault(_region_of(grid, idx), []).append(idx)
    regions = sorted(by_region)
    order = np.random.default_rng(seed).permutation(len(regions))
    n_train = math.floor(ratio * len(regions))
    train_regions = tuple(sorted(regions[k] for k in order[:n_train]))
    test_regions = tuple(sorted(regions[k] for k in order[n_train:]))
    train = [grids[i] for r in train_regions for i in by_region[r]]
    test = [grids[i] for r in test_regions for i in by_region[r]]
    return DatasetSplit(train=train, test=test, train_regions=train_regions, test_regions=test_regions)


def _file_name(index: int) -> str:
    return f"grid_{index:05d}.ckmg"


def save_dataset(
    grids: Sequence[CkmGrid],
    out_dir: Path,
    params: Optional[Dict[str, Any]] = None,
    split: Optional[Tuple[float, int]] = None,
) -> Path:
    """Write grids, ``manifest.json`` and (if ``split=(ratio, seed)``) ``split.json``."""
    out_dir = ensure_dir(Path(out_dir))
    entries = []
    for idx, grid in enumerate(grids):
        name = _file_name(idx)
        save_grid(grid, out_dir / name)
        entries.append({"file": name, "region_id": _region_of(grid, idx)})
    write_json(out_dir / MANIFEST_NAME, {"format": "ckm-dataset", "version": 1, "grids": entries, "params": params or {}})

    if split is not None:
        ratio, seed = split
        result = split_regions(grids, ratio, seed)
        train_set = set(result.train_regions)
        write_json(
            out_dir / SPLIT_NAME,
            {
                "ratio": ratio,
                "seed": seed,
                "train": [e["file"] for e in entries if e["region_id"] in train_set],
                "test": [e["file"] for e in entries if e["region_id"] not in train_set],
            },
        )
    log.info("Wrote %d grids to %s", len(entries), out_dir)
    return out_dir


def load_dataset(directory: Path, part: str = "all") -> List[CkmGrid]:
    """Load grids from a dataset directory.

    ``part`` is ``all``, ``train`` or ``test``; the latter two fall back to every
    grid when the directory has no ``split.json``.
    """
    directory = Path(directory)
    if part not in ("all", "train", "test"):
        raise ValueError(f"part must be all/train/test, got '{part}'")
    manifest = read_json(directory / MANIFEST_NAME)
    regions = {e["file"]: e.get("region_id", "") for e in manifest.get("grids", [])}
    files = list(regions)
    split_path = directory / SPLIT_NAME
    if part != "all" and split_path.exists():
        files = list(read_json(split_path)[part])
    elif part != "all":
        log.warning("No %s in %s; using every grid for '%s'", SPLIT_NAME, directory, part)
    if not files:
        raise ValueError(f"dataset {directory} has no grids for part '{part}'")
    return [load_grid(directory / f, region_id=regions.get(f, "")) for f in files]


def convert_ckmimagenet(gain_dir: Path, aoa_dir: Path, out_dir: Path) -> Path:
    """Conversion entry point for CKMImageNet exports.

    Expected input: per-region gain images already pixel-encoded on [-250, -50] dB and
    AoA maps in degrees with -200 marking buildings; output is a dataset directory
    in the layout written by :func:`save_dataset`. Parsing the native image formats
    is not provided.
    """
    raise NotImplementedError(
        "CKMImageNet parsing is not bundled; convert each region to CkmGrid "
        "(gain_db_to_pixel / aoa_sine_to_pixel of sin(deg2rad(aoa))) and call save_dataset"
    )
