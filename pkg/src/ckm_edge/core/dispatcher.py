"""Operator registry: build forward operators from JSON specs, with alias support.

Design goals:
  * Operator configuration always arrives as ``{"kind": ..., params...}`` JSON so a
    new degradation needs no CLI change.
  * Convenient task aliases (e.g. "ipbox" -> "mask_box", "sr" -> "downsample").
  * Return a fresh, immutable operator per call.

Public surface:
  * build_operator(spec, building=None) -> ForwardOperator
  * parse_operator_json(text_or_path) -> dict
  * list_operator_kinds() -> list[str] of canonical kinds
  * default_zeta(kind) -> observation constraint strength for the task
  * save_observation / load_observation for CKMO files
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import torch

from ckm_edge.config import get_section
from ckm_edge.data.io import ObservationRecord, observation_from_bytes, observation_to_bytes
from ckm_edge.errors import FormatError
from ckm_edge.operators import (
    Downsample,
    ForwardOperator,
    Identity,
    JointTruncQuant,
    MaskBox,
    MaskRandom,
    Observation,
    QuantizeAoa,
    TruncateGain,
)
from ckm_edge.utils.path_utils import atomic_write_bytes

# Canonical operator kinds recognised by the project.
_CANONICAL: List[str] = ["identity", "mask_box", "mask_random", "downsample", "truncate_gain", "quantize_aoa", "jtqr"]

# Aliases map (lowercase) -> canonical kind.
_ALIASES: Dict[str, str] = {
    "ipbox": "mask_box",
    "box": "mask_box",
    "iprandom": "mask_random",
    "random": "mask_random",
    "sr": "downsample",
    "truncate": "truncate_gain",
    "quantize": "quantize_aoa",
    "denoise": "identity",
}

# Task key under ``tasks.zeta`` in config.yaml for each canonical kind.
_ZETA_KEY: Dict[str, str] = {
    "identity": "identity",
    "mask_box": "ipbox",
    "mask_random": "iprandom",
    "downsample": "sr",
    "truncate_gain": "jtqr",
    "quantize_aoa": "jtqr",
    "jtqr": "jtqr",
}

# (required params, optional params with defaults)
_PARAMS: Dict[str, Tuple[Tuple[str, ...], Dict[str, Any]]] = {
    "identity": ((), {}),
    "mask_box": (("top", "left", "h_box", "w_box"), {}),
    "mask_random": (("ratio",), {"seed": 0}),
    "downsample": ((), {"scale": 2}),
    "truncate_gain": ((), {"a": 0.2, "b": 0.7}),
    "quantize_aoa": ((), {"K": 24}),
    "jtqr": ((), {"a": 0.2, "b": 0.7, "K": 24}),
}

# Factories taking (params, building mask).
_REGISTRY: Dict[str, Callable[[Dict[str, Any], Optional[np.ndarray]], ForwardOperator]] = {
    "identity": lambda p, b: Identity(),
    "mask_box": lambda p, b: MaskBox(int(p["top"]), int(p["left"]), int(p["h_box"]), int(p["w_box"])),
    "mask_random": lambda p, b: MaskRandom(float(p["ratio"]), int(p["seed"])),
    "downsample": lambda p, b: Downsample(int(p["scale"])),
    "truncate_gain": lambda p, b: TruncateGain(float(p["a"]), float(p["b"])),
    "quantize_aoa": lambda p, b: QuantizeAoa(int(p["K"]), b),
    "jtqr": lambda p, b: JointTruncQuant(float(p["a"]), float(p["b"]), int(p["K"]), b),
}


def _normalise(name: str) -> str:
    return name.strip().lower()


def canonical_kind(kind: str) -> str:
    """Resolve an alias to its canonical kind (case-insensitive)."""
    if not isinstance(kind, str):
        raise TypeError("operator kind must be a string")
    name = _normalise(kind)
    canonical = _ALIASES.get(name, name)
    if canonical not in _REGISTRY:
        raise ValueError(f"Unknown operator kind: '{kind}'. Supported: {', '.join(_CANONICAL)}.")
    return canonical


def list_operator_kinds() -> List[str]:
    """Return the list of canonical operator kinds."""
    return list(_CANONICAL)


def build_operator(spec: Mapping[str, Any], building: Optional[np.ndarray] = None) -> ForwardOperator:
    """Instantiate an operator from ``{"kind": ..., params...}``.

    ``building`` is the grid's building mask; only quantizing kinds use it.

    Raises
    ------
    TypeError
        If spec is not a mapping.
    ValueError
        On unknown kinds, unknown or missing parameters, or invalid values.
    """
    if not isinstance(spec, Mapping):
        raise TypeError(f"operator spec must be a JSON object, got {type(spec).__name__}")
    if "kind" not in spec:
        raise ValueError("operator spec needs a 'kind' field")
    kind = canonical_kind(spec["kind"])
    required, optional = _PARAMS[kind]
    given = {k: v for k, v in spec.items() if k != "kind"}
    unknown = sorted(set(given) - set(required) - set(optional))
    if unknown:
        allowed = ", ".join(required + tuple(optional)) or "none"
        raise ValueError(f"unknown parameter(s) {', '.join(unknown)} for '{kind}' (allowed: {allowed})")
    missing = [k for k in required if k not in given]
    if missing:
        raise ValueError(f"operator '{kind}' requires {', '.join(missing)}")
    return _REGISTRY[kind]({**optional, **given}, building)


def parse_operator_json(source: Union[str, Path]) -> Dict[str, Any]:
    """Inline JSON text or a path to a JSON file -> operator spec dict."""
    text = str(source)
    if not text.lstrip().startswith("{"):
        path = Path(text)
        if not path.exists():
            raise FileNotFoundError(f"operator JSON not found: {path}")
        text = path.read_text(encoding="utf-8")
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid operator JSON: {exc}") from exc
    if not isinstance(spec, dict):
        raise ValueError("operator JSON must be an object")
    return spec


def default_zeta(kind: str) -> float:
    """ζ used when none is given: 13 for inpainting / SR, 10 for the JTQR family."""
    zetas = get_section("tasks")["zeta"]
    return float(zetas[_ZETA_KEY[canonical_kind(kind)]])


def _building_of(op: ForwardOperator) -> Optional[np.ndarray]:
    building = getattr(op, "building", None)
    if building is None:
        return None
    return building.numpy() if isinstance(building, torch.Tensor) else np.asarray(building, dtype=bool)


def save_observation(obs: Observation, path: Path) -> Path:
    """Write a CKMO file (the building plane rides along for building-aware operators)."""
    record = ObservationRecord(
        y=obs.y.numpy(),
        sigma=obs.sigma,
        operator_spec=obs.operator.to_spec(),
        grid_shape=obs.grid_shape,
        building=_building_of(obs.operator) if obs.operator.needs_building else None,
    )
    return atomic_write_bytes(Path(path), observation_to_bytes(record))


def load_observation(path: Path, spec: Optional[Mapping[str, Any]] = None) -> Observation:
    """Read a CKMO file; ``spec`` overrides the operator stored in it."""
    record = observation_from_bytes(Path(path).read_bytes())
    try:
        op = build_operator(spec if spec is not None else record.operator_spec, building=record.building)
        return Observation(
            y=torch.from_numpy(np.asarray(record.y, dtype=np.float32)),
            operator=op,
            sigma=record.sigma,
            grid_shape=record.grid_shape,
        )
    except ValueError as exc:
        if spec is not None:
            raise
        raise FormatError(f"{path}: {exc}") from exc
