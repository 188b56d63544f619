# conftest.py - Centralized Test Configuration
"""
Shared pytest configuration and fixtures for the ckm-edge test suite.

This file provides:
- A tiny score-network architecture and short noise schedule so tests stay on CPU
- Untrained (zero head) and perturbed weights
- Synthetic grids, a published registry and a running CKMP server
"""

import os
import sys
from collections import OrderedDict
from pathlib import Path
from typing import Iterator, List

import numpy as np
import pytest
import torch

# Ensure the package is importable in a src/ layout
_TESTS_DIR = Path(__file__).resolve().parent
_ROOT = _TESTS_DIR.parent
_SRC = _ROOT / "src"
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

from ckm_edge.cloud import Registry, ServerHandle, serve
from ckm_edge.config import set_config
from ckm_edge.data import CkmGrid, SynthParams, synth_generate
from ckm_edge.diffusion import ArchDescriptor, NoiseSchedule, ScoreNetParams, init_params, make_schedule
from ckm_edge.diffusion.weights import weights_to_bytes

__all__ = [
    "small_schedule",
    "tiny_arch",
    "zero_params",
    "random_params",
    "synth_grids",
    "registry_dir",
    "running_server",
    "perturbed_params",
]

GRID_SIZE = 16


# ===============================================================================
# SHARED FIXTURES
# ===============================================================================

@pytest.fixture
def small_schedule() -> NoiseSchedule:
    """N = 50 with the default 0.1/N .. 20/N ramp."""
    return make_schedule(50)


@pytest.fixture
def tiny_arch() -> ArchDescriptor:
    """Three levels (grid side divisible by 4), well under 10^4 parameters."""
    return ArchDescriptor(base_width=4, channel_mult=(1, 2, 2), emb_dim=8, groups=2, blocks=1)


@pytest.fixture
def zero_params(tiny_arch: ArchDescriptor, small_schedule: NoiseSchedule) -> ScoreNetParams:
    """Untrained weights: the output head is zero, so the score is identically 0."""
    return init_params(tiny_arch, small_schedule, seed=0)


def perturbed_params(params: ScoreNetParams, scale: float = 0.1, seed: int = 1) -> ScoreNetParams:
    """Copy of ``params`` with a random output head (non-trivial score and gradients)."""
    gen = torch.Generator().manual_seed(seed)
    tensors = OrderedDict()
    for name, value in params.tensors.items():
        if name.startswith("out."):
            value = scale * torch.randn(value.shape, generator=gen)
        tensors[name] = value.clone()
    return ScoreNetParams(arch=params.arch, schedule=params.schedule, tensors=tensors)


@pytest.fixture
def random_params(zero_params: ScoreNetParams) -> ScoreNetParams:
    return perturbed_params(zero_params)


@pytest.fixture
def synth_grids() -> List[CkmGrid]:
    """Six 16×16 synthetic grids, one region each."""
    return [synth_generate(SynthParams(size=GRID_SIZE, seed=seed)) for seed in range(6)]


@pytest.fixture
def registry_dir(tmp_path: Path, zero_params: ScoreNetParams) -> Path:
    """Registry directory with ``v1`` (the zero-head weights) published."""
    root = tmp_path / "registry"
    Registry.open(root).publish(weights_to_bytes(zero_params), "v1")
    return root


@pytest.fixture
def running_server(registry_dir: Path) -> Iterator[ServerHandle]:
    handle = serve(Registry.open(registry_dir), "127.0.0.1:0")
    try:
        yield handle
    finally:
        handle.shutdown()


# ===============================================================================
# TEST CONFIGURATION
# ===============================================================================

def pytest_collection_modifyitems(config, items):  # type: ignore[override]
    """Auto-apply markers based on nodeid conventions to reduce boilerplate."""
    for item in items:
        if "_contract" in item.nodeid:
            item.add_marker(pytest.mark.contract)
        if "test_cli" in item.nodeid:
            item.add_marker(pytest.mark.cli)
        elif "test_cloud" in item.nodeid:
            item.add_marker(pytest.mark.integration)
        elif "test_path" in item.nodeid or "test_protocol" in item.nodeid or "test_config" in item.nodeid:
            item.add_marker(pytest.mark.unit)


# ===============================================================================
# ENVIRONMENT SETUP
# ===============================================================================

@pytest.fixture(autouse=True)
def setup_test_environment(monkeypatch, tmp_path: Path) -> Iterator[None]:
    """Built-in defaults only, a private edge cache, and no LOG_* surprises."""
    monkeypatch.setenv("CKM_CACHE_DIR", str(tmp_path / "edge-cache"))
    for var in ("LOG_FORMAT", "LOG_COLOR"):
        monkeypatch.delenv(var, raising=False)
    set_config({})
    yield
    set_config(None)


@pytest.fixture(autouse=True)
def deterministic_seed() -> None:
    """Seed the global generators; library code never relies on them."""
    torch.manual_seed(0)
    np.random.seed(0)
