"""Configuration management for ckm-edge.

Loads settings from config.yaml if present, otherwise uses defaults.
Priority: CLI args > config.yaml > defaults
"""

from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

# Load environment variables from .env (CKM_CACHE_DIR, LOG_LEVEL, ...)
load_dotenv()

CACHE_ENV_VAR = "CKM_CACHE_DIR"

# Built-in defaults per config.yaml section
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "schedule": {
        "n_timesteps": 1000,
        "beta_min": None,  # None: 0.1 / N
        "beta_max": None,  # None: 20 / N
    },
    "network": {
        "base_width": 32,
        "channel_mult": [1, 2, 2],
        "emb_dim": 64,
        "groups": 8,
    },
    "training": {
        "batch_size": 16,
        "steps": 20000,
        "learning_rate": 2.0e-4,
        "ema_decay": 0.999,
        "log_every": 50,
        "checkpoint_every": 1000,
    },
    "sampling": {
        "corrector_steps": 1,
        "snr": 0.16,
        "sigma": 0.01,
        "detach_score": False,
    },
    "tasks": {
        "zeta": {"ipbox": 13.0, "iprandom": 13.0, "sr": 13.0, "jtqr": 10.0, "identity": 13.0},
        "box_side": [5, 50],
        "mask_ratio": [0.001526, 0.1526],
        "scale": 2,
        "truncation": [0.2, 0.7],
        "sectors": 24,
        "test_grids": 20,
    },
    "server": {
        "bind": "127.0.0.1:7070",
        "timeout": 30,
    },
}

# Cache loaded config to avoid re-reading file
_cached_config: Optional[Dict[str, Any]] = None


def get_config() -> Dict[str, Any]:
    """Get cached config or load it."""
    global _cached_config
    if _cached_config is None:
        _cached_config = load_config()
    return _cached_config


def set_config(config: Optional[Dict[str, Any]]) -> None:
    """Replace the cached config (``None`` forces a reload on next access)."""
    global _cached_config
    _cached_config = config


def get_section(name: str) -> Dict[str, Any]:
    """Return one config section with built-in defaults filled in underneath."""
    merged = copy.deepcopy(DEFAULTS.get(name, {}))
    override = get_config().get(name) or {}
    if not isinstance(override, dict):
        raise ValueError(f"config section '{name}' must be a mapping, got {type(override).__name__}")
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def get_timeout() -> Optional[float]:
    """Socket timeout from config. Returns None for no timeout."""
    timeout = get_section("server").get("timeout", 30)
    # 0 or None means no timeout
    if not timeout:
        return None
    return float(timeout)


def get_cache_dir() -> Path:
    """Edge cache directory: $CKM_CACHE_DIR > config ``cache_dir`` > ~/.cache/ckm-edge."""
    env = os.getenv(CACHE_ENV_VAR)
    if env:
        return Path(env).expanduser()
    configured = get_config().get("cache_dir")
    if configured:
        return Path(configured).expanduser()
    return Path.home() / ".cache" / "ckm-edge"


def find_config_file(start_path: Optional[Path] = None) -> Optional[Path]:
    """Search for config.yaml in current directory or project root."""
    search_path = start_path or Path.cwd()

    for directory in [search_path] + list(search_path.parents):
        for filename in ['config.yaml', 'config.yml']:
            config_path = directory / filename
            if config_path.exists():
                return config_path

        # Stop at project root (contains pyproject.toml)
        if (directory / 'pyproject.toml').exists():
            break

    return None


def load_config(config_path: Optional[Path] = None) -> Dict[str, Any]:
    """Load configuration from YAML file.

    Args:
        config_path: Explicit path to config file. If None, searches for config.yaml

    Returns:
        Dictionary with config values, empty dict if no config file found
    """
    if config_path is None:
        config_path = find_config_file()
    elif not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")

    if config_path and config_path.exists():
        with open(config_path, 'r') as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{config_path} must contain a mapping at top level")
        return loaded

    return {}
