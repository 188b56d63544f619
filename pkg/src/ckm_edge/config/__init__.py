"""Configuration package for ckm-edge."""

from ckm_edge.config.config import (
    CACHE_ENV_VAR,
    DEFAULTS,
    find_config_file,
    get_cache_dir,
    get_config,
    get_section,
    get_timeout,
    load_config,
    set_config,
)

__all__ = [
    "CACHE_ENV_VAR",
    "DEFAULTS",
    "find_config_file",
    "get_cache_dir",
    "get_config",
    "get_section",
    "get_timeout",
    "load_config",
    "set_config",
]
