"""Edge side: fetch versioned priors, keep a content-addressed cache, construct locally.

Cache layout (``$CKM_CACHE_DIR`` or the configured ``cache_dir``)::

    blobs/<sha256>.ckmw         weights, named by their hash
    manifests/<version>.json    last manifest seen for a version
    latest.json                 manifest "latest" resolved to on the last online fetch

All files are written by atomic rename, so parallel edge jobs may share one cache.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from ckm_edge.cloud.protocol import FramedConnection, FrameType
from ckm_edge.cloud.registry import LATEST, ModelManifest, sha256_hex
from ckm_edge.config import get_cache_dir, get_timeout
from ckm_edge.core.dispatcher import parse_operator_json
from ckm_edge.core.posterior import PosteriorConfig
from ckm_edge.core.runner import ConstructionRunner
from ckm_edge.diffusion.weights import weights_from_bytes
from ckm_edge.errors import FormatError, IntegrityError, NetworkError, ProtocolError
from ckm_edge.utils.logger import get_logger
from ckm_edge.utils.path_utils import atomic_write_bytes, ensure_dir, read_json, write_json

__all__ = ["EdgeClient", "ModelCache", "fetch_model", "edge_construct"]

logger = get_logger(__name__)

Address = Union[str, Tuple[str, int]]


class EdgeClient:
    """CKMP client holding one connection, opened on first use.

    Byte and frame counters accumulate over every connection the client opens,
    which is what the wire-accounting tests read.
    """

    def __init__(self, address: Address, timeout: Optional[float] = None) -> None:
        self.address = address
        self.timeout = get_timeout() if timeout is None else timeout
        self._conn: Optional[FramedConnection] = None
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames_received: Counter = Counter()

    def _connection(self) -> FramedConnection:
        if self._conn is None:
            self._conn = FramedConnection.connect(self.address, timeout=self.timeout)
        return self._conn

    def _request(self, ftype: FrameType, payload: bytes, expect: FrameType):
        conn = self._connection()
        sent, received = conn.bytes_sent, conn.bytes_received
        before = Counter(conn.frames_received)
        try:
            return conn.request(ftype, payload, expect)
        except (NetworkError, ProtocolError):
            self.close()
            raise
        finally:
            self.bytes_sent += conn.bytes_sent - sent
            self.bytes_received += conn.bytes_received - received
            self.frames_received.update(conn.frames_received - before)

    @property
    def weight_transfers(self) -> int:
        return self.frames_received[FrameType.WEIGHTS]

    def list_models(self) -> List[ModelManifest]:
        frame = self._request(FrameType.LIST_REQ, b"", FrameType.LIST_RESP)
        data = frame.json()
        if not isinstance(data, list):
            raise ProtocolError("LIST_RESP payload is not a JSON array")
        return [ModelManifest.from_dict(m) for m in data]

    def manifest(self, version: str = LATEST) -> ModelManifest:
        frame = self._request(FrameType.GET_MANIFEST, version.encode("utf-8"), FrameType.MANIFEST)
        return ModelManifest.from_dict(frame.json())

    def weights(self, version: str) -> bytes:
        return self._request(FrameType.GET_WEIGHTS, version.encode("utf-8"), FrameType.WEIGHTS).payload

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def __enter__(self) -> "EdgeClient":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


class ModelCache:
    def __init__(self, root: Optional[Path] = None) -> None:
        self.root = Path(root) if root is not None else get_cache_dir()

    def blob_path(self, sha256: str) -> Path:
        return self.root / "blobs" / f"{sha256}.ckmw"

    def _manifest_path(self, version: str) -> Path:
        if version == LATEST:
            return self.root / "latest.json"
        return self.root / "manifests" / f"{version}.json"

    def blobs(self) -> List[Path]:
        folder = self.root / "blobs"
        return sorted(folder.glob("*.ckmw")) if folder.exists() else []

    def has_blob(self, manifest: ModelManifest) -> bool:
        return self.blob_path(manifest.sha256).is_file()

    def put_blob(self, manifest: ModelManifest, payload: bytes) -> Path:
        """Verify ``payload`` against ``manifest`` and store it; nothing is written on mismatch."""
        manifest.verify(payload)
        try:
            weights_from_bytes(payload)
        except FormatError as exc:
            raise IntegrityError(f"{manifest.version}: payload hashes correctly but is not valid CKMW: {exc}") from exc
        path = self.blob_path(manifest.sha256)
        if not path.exists():
            atomic_write_bytes(path, payload)
        return path

    def verified_blob(self, manifest: ModelManifest) -> Path:
        """Cached blob for ``manifest``, re-hashed; a corrupt blob is removed."""
        path = self.blob_path(manifest.sha256)
        try:
            manifest.verify(path.read_bytes())
        except IntegrityError:
            path.unlink(missing_ok=True)
            raise
        return path

    def remember(self, manifest: ModelManifest, latest: bool = False) -> None:
        ensure_dir(self.root)
        write_json(self._manifest_path(manifest.version), manifest.to_dict())
        if latest:
            write_json(self._manifest_path(LATEST), manifest.to_dict())

    def recall(self, version: str = LATEST) -> Optional[ModelManifest]:
        path = self._manifest_path(version)
        if not path.is_file():
            return None
        return ModelManifest.from_dict(read_json(path))


def _offline(cache: ModelCache, version: str, exc: NetworkError) -> Path:
    manifest = cache.recall(version)
    if manifest is None or not cache.has_blob(manifest):
        raise NetworkError(f"{exc} and no cached model for '{version}'") from exc
    logger.warning("server unreachable, using cached model", extra={"fields": {"version": manifest.version}})
    return cache.verified_blob(manifest)


def fetch_model(
    address: Address,
    version: str = LATEST,
    cache_dir: Optional[Path] = None,
    client: Optional[EdgeClient] = None,
) -> Path:
    """Local path of verified weights for ``version`` (``"latest"`` allowed).

    The manifest is always asked for; the payload only travels when its hash is not
    already cached. When the server cannot be reached, a cached manifest for the
    same version (or the last resolved ``latest``) is used instead.
    """
    cache = ModelCache(cache_dir)
    own = client is None
    client = client or EdgeClient(address)
    try:
        try:
            manifest = client.manifest(version)
        except NetworkError as exc:
            return _offline(cache, version, exc)
        if cache.has_blob(manifest):
            logger.info("cache hit", extra={"fields": {"version": manifest.version, "sha256": manifest.sha256}})
            path = cache.verified_blob(manifest)
        else:
            logger.info("cache miss", extra={"fields": {"version": manifest.version, "bytes": manifest.size}})
            try:
                payload = client.weights(manifest.version)
            except NetworkError as exc:
                raise NetworkError(f"weights transfer for {manifest.version} failed: {exc}") from exc
            try:
                path = cache.put_blob(manifest, payload)
            except IntegrityError as exc:
                exc.hint = "payload discarded; retry the fetch"
                raise
        cache.remember(manifest, latest=version == LATEST)
        return path
    finally:
        if own:
            client.close()


def edge_construct(
    address: Address,
    observation_path: Path,
    operator_json: Optional[Union[str, Path, Mapping[str, Any]]],
    cfg: PosteriorConfig,
    version: str = LATEST,
    cache_dir: Optional[Path] = None,
    out_path: Optional[Path] = None,
    outputs_dir: Path = Path("outputs"),
    client: Optional[EdgeClient] = None,
) -> Path:
    """Ensure the prior is cached, then reconstruct ``observation_path`` locally.

    ``operator_json`` (inline JSON, a file, or a mapping) replaces the operator stored
    in the observation; the cached prior is shared by every operator.
    """
    weights_path = fetch_model(address, version, cache_dir=cache_dir, client=client)
    spec: Optional[Dict[str, Any]] = None
    if isinstance(operator_json, Mapping):
        spec = dict(operator_json)
    elif operator_json is not None:
        spec = parse_operator_json(operator_json)
    runner = ConstructionRunner.from_files(
        weights_path, observation_path, cfg, operator_spec=spec, out_path=out_path, outputs_dir=outputs_dir
    )
    runner.run()
    return runner.save_to
