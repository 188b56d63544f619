"""
Cloud registry and edge cache contracts.

A real CKMP server runs on a loopback port for each test; the edge side talks
to it through EdgeClient so byte and frame counters can be checked.
"""
import hashlib
import socket
from concurrent.futures import ThreadPoolExecutor

import pytest

pytestmark = pytest.mark.contract

from ckm_edge.cloud import EdgeClient, ModelCache, Registry, edge_construct, fetch_model, publish_model, serve
from ckm_edge.cloud.protocol import Frame, FrameType
from ckm_edge.cloud.server import handle_request
from ckm_edge.core import PosteriorConfig
from ckm_edge.core.dispatcher import save_observation
from ckm_edge.data import load_grid
from ckm_edge.diffusion import save_weights
from ckm_edge.diffusion.weights import weights_to_bytes
from ckm_edge.errors import FormatError, IntegrityError, NetworkError, ProtocolError, RegistryError
from ckm_edge.operators import Identity, observe


def _free_address() -> str:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return "127.0.0.1:%d" % sock.getsockname()[1]


class _CorruptingClient(EdgeClient):
    """Flips one byte of every weights payload after it arrives."""

    def weights(self, version: str) -> bytes:
        payload = bytearray(super().weights(version))
        payload[len(payload) // 2] ^= 0xFF
        return bytes(payload)


class TestRegistry:
    def test_publish_order_defines_latest(self, registry_dir, random_params):
        reg = Registry.open(registry_dir)
        reg.publish(weights_to_bytes(random_params), "v2")
        assert [m.version for m in reg.list()] == ["v1", "v2"]
        assert reg.current == "v2"
        assert reg.manifest("latest").version == "v2"
        reopened = Registry.open(registry_dir)
        assert [m.version for m in reopened.list()] == ["v1", "v2"]
        assert reopened.payload("v2") == weights_to_bytes(random_params)

    def test_manifest_hash_matches_payload(self, registry_dir, zero_params):
        blob = weights_to_bytes(zero_params)
        manifest = Registry.open(registry_dir).manifest("v1")
        assert manifest.sha256 == hashlib.sha256(blob).hexdigest()
        assert manifest.size == len(blob)
        assert manifest.schedule["N"] == 50
        assert manifest.arch == zero_params.arch.to_string()

    def test_duplicate_version(self, registry_dir, zero_params):
        with pytest.raises(RegistryError, match="already published"):
            Registry.open(registry_dir).publish(weights_to_bytes(zero_params), "v1")

    @pytest.mark.parametrize("version", ["latest", "", "a/b", "v 1"])
    def test_invalid_version_names(self, tmp_path, zero_params, version):
        with pytest.raises(ValueError):
            Registry.open(tmp_path / "reg").publish(weights_to_bytes(zero_params), version)

    def test_corrupt_weights_not_published(self, tmp_path):
        reg = Registry.open(tmp_path / "reg")
        with pytest.raises(FormatError):
            reg.publish(b"CKMW" + b"\x00" * 40, "v1")
        assert reg.list() == []

    def test_publish_model_from_file(self, tmp_path, zero_params):
        path = save_weights(zero_params, tmp_path / "prior.ckmw")
        manifest = publish_model(tmp_path / "reg", path, "2026.10")
        assert manifest.version == "2026.10"
        assert manifest.trained_steps == zero_params.trained_steps

    def test_tampered_payload_detected_on_open(self, registry_dir):
        path = registry_dir / "weights" / "v1.ckmw"
        data = bytearray(path.read_bytes())
        data[-1] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(IntegrityError):
            Registry.open(registry_dir)

    def test_missing_registry(self, tmp_path):
        with pytest.raises(RegistryError, match="no registry"):
            Registry.open(tmp_path / "absent", create=False)

    def test_empty_registry_has_no_latest(self, tmp_path):
        with pytest.raises(RegistryError, match="empty"):
            Registry.open(tmp_path / "reg").manifest("latest")


class TestServer:
    def test_unknown_version_is_error_frame(self, registry_dir):
        rtype, payload = handle_request(Registry.open(registry_dir), Frame(FrameType.GET_WEIGHTS, b"v9"))
        assert rtype == FrameType.ERROR
        assert payload == b"unknown version: v9"

    def test_response_frame_as_request(self, registry_dir):
        rtype, _ = handle_request(Registry.open(registry_dir), Frame(FrameType.MANIFEST, b"{}"))
        assert rtype == FrameType.ERROR

    def test_list_over_the_wire(self, running_server):
        with EdgeClient(running_server.address) as client:
            models = client.list_models()
        assert [m.version for m in models] == ["v1"]

    def test_unknown_version_over_the_wire(self, running_server):
        with EdgeClient(running_server.address_string) as client:
            with pytest.raises(ProtocolError, match="unknown version: v9"):
                client.manifest("v9")

    def test_concurrent_fetches_identical(self, running_server, registry_dir):
        """Eight clients fetching at once MUST all get the published bytes."""
        expected = Registry.open(registry_dir).payload("v1")

        def pull(_):
            with EdgeClient(running_server.address) as client:
                return client.weights("v1")

        with ThreadPoolExecutor(max_workers=8) as pool:
            blobs = list(pool.map(pull, range(8)))
        assert all(blob == expected for blob in blobs)

    def test_many_requests_on_one_connection(self, running_server):
        with EdgeClient(running_server.address) as client:
            versions = [client.manifest("latest").version for _ in range(5)]
        assert versions == ["v1"] * 5


class TestEdgeCache:
    def test_second_fetch_moves_only_the_manifest(self, running_server, tmp_path):
        """A cached prior MUST NOT be transferred again."""
        cache_dir = tmp_path / "cache"
        client = EdgeClient(running_server.address)
        try:
            first = fetch_model(running_server.address, "v1", cache_dir=cache_dir, client=client)
            after_first = client.bytes_received
            second = fetch_model(running_server.address, "v1", cache_dir=cache_dir, client=client)
            assert first == second
            assert client.bytes_received - after_first < 1024
            assert client.weight_transfers == 1
        finally:
            client.close()

    def test_blob_named_by_hash(self, running_server, registry_dir, tmp_path):
        path = fetch_model(running_server.address, "v1", cache_dir=tmp_path / "cache")
        sha = Registry.open(registry_dir).manifest("v1").sha256
        assert path.name == f"{sha}.ckmw"
        assert hashlib.sha256(path.read_bytes()).hexdigest() == sha

    def test_corrupt_transfer_leaves_cache_untouched(self, running_server, tmp_path):
        cache = ModelCache(tmp_path / "cache")
        client = _CorruptingClient(running_server.address)
        with pytest.raises(IntegrityError):
            fetch_model(running_server.address, "v1", cache_dir=cache.root, client=client)
        client.close()
        assert cache.blobs() == []
        assert cache.recall("v1") is None

    def test_corrupt_cached_blob_is_removed(self, running_server, tmp_path):
        cache_dir = tmp_path / "cache"
        path = fetch_model(running_server.address, "v1", cache_dir=cache_dir)
        path.write_bytes(b"garbage")
        with pytest.raises(IntegrityError):
            fetch_model(running_server.address, "v1", cache_dir=cache_dir)
        assert not path.exists()
        assert fetch_model(running_server.address, "v1", cache_dir=cache_dir) == path

    def test_latest_is_remembered(self, running_server, tmp_path):
        cache = ModelCache(tmp_path / "cache")
        fetch_model(running_server.address, "latest", cache_dir=cache.root)
        assert cache.recall("latest").version == "v1"
        assert cache.recall("v1").version == "v1"

    def test_default_cache_dir_from_environment(self, running_server, tmp_path):
        path = fetch_model(running_server.address, "v1")
        assert path.parent.parent == tmp_path / "edge-cache"


class TestOffline:
    def test_warm_cache_survives_server_loss(self, registry_dir, tmp_path):
        cache_dir = tmp_path / "cache"
        handle = serve(Registry.open(registry_dir))
        address = handle.address_string
        online = fetch_model(address, "latest", cache_dir=cache_dir)
        handle.shutdown()
        assert fetch_model(address, "latest", cache_dir=cache_dir) == online
        assert fetch_model(address, "v1", cache_dir=cache_dir) == online

    def test_cold_cache_fails(self, tmp_path, synth_grids):
        obs_path = save_observation(observe(synth_grids[0], Identity(), sigma=0.0), tmp_path / "obs.ckmo")
        out = tmp_path / "rec.ckmg"
        with pytest.raises(NetworkError) as excinfo:
            edge_construct(_free_address(), obs_path, None, PosteriorConfig(), out_path=out, cache_dir=tmp_path / "cache")
        assert excinfo.value.exit_code == 4
        assert not out.exists()


class TestEdgeConstruct:
    def test_operators_share_one_transfer(self, running_server, tmp_path, synth_grids):
        """Different operators on one observation MUST reuse the cached prior."""
        obs_path = save_observation(observe(synth_grids[0], Identity(), sigma=0.0), tmp_path / "obs.ckmo")
        client = EdgeClient(running_server.address)
        cfg = PosteriorConfig(zeta=1.0)
        try:
            outputs = [
                edge_construct(
                    running_server.address,
                    obs_path,
                    spec,
                    cfg,
                    cache_dir=tmp_path / "cache",
                    out_path=tmp_path / f"rec{k}.ckmg",
                    client=client,
                )
                for k, spec in enumerate(
                    ['{"kind": "ipbox", "top": 4, "left": 4, "h_box": 6, "w_box": 6}', {"kind": "iprandom", "ratio": 0.3}]
                )
            ]
        finally:
            client.close()
        assert client.weight_transfers == 1
        for path in outputs:
            assert load_grid(path).shape == (16, 16)
            assert path.with_suffix(".json").is_file()
