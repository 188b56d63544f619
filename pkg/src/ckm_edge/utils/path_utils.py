"""Filesystem and path helpers.

Design goals:
    * Every artifact write is atomic (temp file in the target directory, then
      ``os.replace``) so concurrent edge jobs sharing a cache never observe a
      partial file.
    * JSON is written with sorted keys and a trailing newline so identical inputs
      give identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, List, Optional

__all__ = [
    "find_project_root",
    "ensure_dir",
    "atomic_write_bytes",
    "atomic_write_text",
    "write_json",
    "read_json",
    "list_files",
    "get_output_path",
]

_ROOT_CACHE: Optional[Path] = None


def find_project_root(start_path: Optional[Path] = None) -> Path:
    """Locate and cache the project root containing ``pyproject.toml``.

    Parameters
    ----------
    start_path: Path | None
        Starting directory (defaults to this file's parent). Accepts a file path.
    """
    global _ROOT_CACHE
    if start_path is None and _ROOT_CACHE and _ROOT_CACHE.exists():  # pragma: no cover (cache branch)
        return _ROOT_CACHE
    if start_path is None:
        start_path = Path(__file__).parent
    start_path = start_path if start_path.is_dir() else start_path.parent
    current = start_path.resolve()
    while True:
        if (current / "pyproject.toml").exists():
            _ROOT_CACHE = current
            return current
        if current.parent == current:
            break
        current = current.parent
    raise FileNotFoundError("Could not locate project root containing pyproject.toml")


def ensure_dir(path: Path) -> Path:
    """Create directory (and parents) if missing (idempotent)."""
    path.mkdir(parents=True, exist_ok=True)
    return path


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    """Write ``data`` to ``path`` via a sibling temp file and ``os.replace``."""
    ensure_dir(path.parent)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, payload: Any) -> Path:
    """Deterministic JSON dump (sorted keys, 2-space indent, trailing newline)."""
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    return atomic_write_text(path, text)


def read_json(path: Path) -> Any:
    if not path.is_file():
        raise FileNotFoundError(f"Expected file at {path} but none was found")
    return json.loads(path.read_text(encoding="utf-8"))


def list_files(directory: Path, suffix: str) -> List[Path]:
    """Sorted files with ``suffix`` directly under ``directory``."""
    if not directory.exists():
        return []
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix == suffix)


def _get_next_run_number(base_path: Path) -> int:
    """Find the next available run number for a given base path."""
    if not base_path.parent.exists():
        return 1

    base_name = base_path.stem
    extension = base_path.suffix

    # Look for existing files with pattern: base_name_N.extension
    existing_numbers = []
    for existing_file in base_path.parent.iterdir():
        if existing_file.is_file() and existing_file.suffix == extension:
            name = existing_file.stem
            if name.startswith(base_name + "_") and name[len(base_name + "_"):].isdigit():
                existing_numbers.append(int(name[len(base_name + "_"):]))

    if not existing_numbers:
        return 1

    return max(existing_numbers) + 1


def get_output_path(outputs_dir: Path, command: str, stem: str, ext: str) -> Path:
    """Return ``<outputs>/<command>/<stem>_<run><ext>`` with the next free run number.

    Used when a command is not given an explicit ``--out``.
    """
    if not stem:
        raise ValueError("stem is required for output path")
    folder = ensure_dir(outputs_dir / command)
    run_number = _get_next_run_number(folder / f"{stem}{ext}")
    return folder / f"{stem}_{run_number}{ext}"
