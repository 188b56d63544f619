"""
Test path utilities: atomic writes, deterministic JSON and auto-numbered outputs.
"""
from pathlib import Path

import pytest

from ckm_edge.utils.path_utils import (
    atomic_write_bytes,
    ensure_dir,
    find_project_root,
    get_output_path,
    list_files,
    read_json,
    write_json,
)


class TestPathUtils:
    """Test utility functions for path handling and file discovery."""

    def test_get_output_path_numbers_runs(self, tmp_path):
        first = get_output_path(tmp_path, "construct", "g", ".ckmg")
        assert first == tmp_path / "construct" / "g_1.ckmg"
        first.write_bytes(b"x")
        (tmp_path / "construct" / "g_7.ckmg").write_bytes(b"x")
        (tmp_path / "construct" / "g_notes.ckmg").write_bytes(b"x")
        assert get_output_path(tmp_path, "construct", "g", ".ckmg").name == "g_8.ckmg"

    def test_get_output_path_ignores_other_extensions(self, tmp_path):
        ensure_dir(tmp_path / "eval")
        (tmp_path / "eval" / "ipbox_3.csv").write_text("")
        assert get_output_path(tmp_path, "eval", "ipbox", ".json").name == "ipbox_1.json"

    def test_get_output_path_needs_stem(self, tmp_path):
        with pytest.raises(ValueError):
            get_output_path(tmp_path, "eval", "", ".json")

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        path = atomic_write_bytes(tmp_path / "deep" / "blob.bin", b"\x00\x01")
        atomic_write_bytes(path, b"\x02")
        assert path.read_bytes() == b"\x02"
        assert [p.name for p in path.parent.iterdir()] == ["blob.bin"]

    def test_json_is_deterministic(self, tmp_path):
        a = write_json(tmp_path / "a.json", {"b": 1, "a": [1.5, "ü"]})
        b = write_json(tmp_path / "b.json", {"a": [1.5, "ü"], "b": 1})
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text(encoding="utf-8").endswith("}\n")
        assert read_json(a) == {"a": [1.5, "ü"], "b": 1}

    def test_read_json_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_json(tmp_path / "absent.json")

    def test_list_files(self, tmp_path):
        for name in ("b.ckmg", "a.ckmg", "c.json"):
            (tmp_path / name).write_text("")
        ensure_dir(tmp_path / "d.ckmg")
        assert [p.name for p in list_files(tmp_path, ".ckmg")] == ["a.ckmg", "b.ckmg"]
        assert list_files(tmp_path / "absent", ".ckmg") == []

    def test_find_project_root(self):
        root = find_project_root(Path(__file__))
        assert (root / "pyproject.toml").exists()
        assert (root / "src" / "ckm_edge").is_dir()
