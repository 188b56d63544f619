"""Utility functions."""

from ckm_edge.utils.logger import configure_logging, get_logger, timed
from ckm_edge.utils.path_utils import (
    atomic_write_bytes,
    atomic_write_text,
    ensure_dir,
    find_project_root,
    get_output_path,
    list_files,
    read_json,
    write_json,
)

__all__ = [
    "configure_logging",
    "get_logger",
    "timed",
    "atomic_write_bytes",
    "atomic_write_text",
    "ensure_dir",
    "find_project_root",
    "get_output_path",
    "list_files",
    "read_json",
    "write_json",
]
