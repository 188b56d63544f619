"""Cloud-side model registry.

Layout on disk::

    <root>/registry.json        {"current": "v2", "models": [manifest, ...]}  (publish order)
    <root>/weights/<version>.ckmw

Every payload is checked against its manifest when the registry is opened.
Reads may run concurrently; ``publish`` is serialised by an in-process lock and
both files are replaced atomically.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ckm_edge.diffusion.weights import weights_from_bytes
from ckm_edge.errors import FormatError, IntegrityError, RegistryError
from ckm_edge.utils.logger import get_logger
from ckm_edge.utils.path_utils import atomic_write_bytes, ensure_dir, read_json, write_json

__all__ = ["LATEST", "ModelManifest", "Registry", "publish_model", "sha256_hex"]

logger = get_logger(__name__)

LATEST = "latest"
INDEX_NAME = "registry.json"
_VERSION_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,63}$")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class ModelManifest:
    version: str
    arch: str
    schedule: Dict[str, Any]
    size: int
    sha256: str
    published_at: str
    trained_steps: int = 0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelManifest":
        try:
            return cls(
                version=str(data["version"]),
                arch=str(data["arch"]),
                schedule=dict(data["schedule"]),
                size=int(data["size"]),
                sha256=str(data["sha256"]),
                published_at=str(data["published_at"]),
                trained_steps=int(data.get("trained_steps", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed model manifest: {exc}") from exc

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def verify(self, payload: bytes) -> None:
        """Raise IntegrityError unless ``payload`` is exactly what this manifest describes."""
        if len(payload) != self.size:
            raise IntegrityError(f"{self.version}: payload is {len(payload)} bytes, manifest says {self.size}")
        digest = sha256_hex(payload)
        if digest != self.sha256:
            raise IntegrityError(f"{self.version}: sha256 {digest[:12]}… does not match manifest {self.sha256[:12]}…")


def _validate_version(version: str) -> str:
    version = str(version).strip()
    if version == LATEST:
        raise ValueError(f"'{LATEST}' is reserved and cannot be published")
    if not _VERSION_RE.match(version):
        raise ValueError(f"invalid version '{version}' (letters, digits, '.', '_' and '-' only)")
    return version


class Registry:
    """Versioned prior weights. Use :meth:`open`, not the constructor."""

    def __init__(self, root: Path, models: List[ModelManifest], payloads: Dict[str, bytes]) -> None:
        self.root = Path(root)
        self._models = list(models)
        self._payloads = dict(payloads)
        self._lock = threading.RLock()

    @property
    def index_path(self) -> Path:
        return self.root / INDEX_NAME

    def _weights_path(self, version: str) -> Path:
        return self.root / "weights" / f"{version}.ckmw"

    # Loading ------------------------------------------------------------------------
    @classmethod
    def open(cls, root: Union[str, Path], create: bool = True) -> "Registry":
        root = Path(root)
        index = root / INDEX_NAME
        if not index.exists():
            if not create:
                raise RegistryError(f"no registry at {root}", hint="publish a model first")
            ensure_dir(root / "weights")
            return cls(root, [], {})
        try:
            data = read_json(index)
        except ValueError as exc:
            raise RegistryError(f"{index} is not valid JSON: {exc}") from exc
        models = [ModelManifest.from_dict(m) for m in data.get("models", [])]
        seen = set()
        payloads: Dict[str, bytes] = {}
        reg = cls(root, models, payloads)
        for m in models:
            if m.version in seen:
                raise RegistryError(f"{index} lists version '{m.version}' twice")
            seen.add(m.version)
            path = reg._weights_path(m.version)
            if not path.is_file():
                raise RegistryError(f"payload for {m.version} missing at {path}")
            blob = path.read_bytes()
            m.verify(blob)
            payloads[m.version] = blob
        current = data.get("current")
        if models and current != models[-1].version:
            raise RegistryError(f"current version '{current}' is not the last published ({models[-1].version})")
        reg._payloads = payloads
        logger.info("opened registry", extra={"fields": {"root": str(root), "models": len(models)}})
        return reg

    # Queries ------------------------------------------------------------------------
    @property
    def current(self) -> Optional[str]:
        with self._lock:
            return self._models[-1].version if self._models else None

    def list(self) -> List[ModelManifest]:
        with self._lock:
            return list(self._models)

    def resolve(self, version: str) -> str:
        with self._lock:
            if version == LATEST:
                if not self._models:
                    raise RegistryError("registry is empty")
                return self._models[-1].version
            if version not in self._payloads:
                raise RegistryError(f"unknown version '{version}'")
            return version

    def manifest(self, version: str = LATEST) -> ModelManifest:
        with self._lock:
            resolved = self.resolve(version)
            return next(m for m in self._models if m.version == resolved)

    def payload(self, version: str = LATEST) -> bytes:
        with self._lock:
            return self._payloads[self.resolve(version)]

    # Publishing -----------------------------------------------------------------------
    def publish(self, blob: bytes, version: str) -> ModelManifest:
        """Add ``blob`` (CKMW bytes) as ``version`` and make it current."""
        version = _validate_version(version)
        params = weights_from_bytes(blob)  # FormatError on corrupt weights
        with self._lock:
            if version in self._payloads:
                raise RegistryError(f"version '{version}' already published")
            manifest = ModelManifest(
                version=version,
                arch=params.arch.to_string(),
                schedule={k: params.descriptor()[k] for k in ("N", "beta_min", "beta_max")},
                size=len(blob),
                sha256=sha256_hex(blob),
                published_at=datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
                trained_steps=params.trained_steps,
            )
            atomic_write_bytes(self._weights_path(version), blob)
            models = self._models + [manifest]
            write_json(self.index_path, {"current": version, "models": [m.to_dict() for m in models]})
            self._models = models
            self._payloads[version] = blob
        logger.info("published", extra={"fields": {"version": version, "sha256": manifest.sha256, "bytes": manifest.size}})
        return manifest


def publish_model(registry: Union[Registry, str, Path], weights_path: Path, version: str) -> ModelManifest:
    reg = registry if isinstance(registry, Registry) else Registry.open(registry)
    return reg.publish(Path(weights_path).read_bytes(), version)
