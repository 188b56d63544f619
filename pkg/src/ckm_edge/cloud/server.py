"""Serving endpoint for a :class:`Registry`.

One thread per connection; each connection may carry any number of requests.
The registry is only read here, so handlers never block each other.
"""

from __future__ import annotations

import json
import socketserver
import threading
from typing import Optional, Tuple, Union

from ckm_edge.cloud.protocol import Frame, FramedConnection, FrameType, parse_address
from ckm_edge.cloud.registry import Registry
from ckm_edge.errors import CkmError, NetworkError, ProtocolError, RegistryError
from ckm_edge.utils.logger import get_logger

__all__ = ["ServerHandle", "serve", "handle_request"]

logger = get_logger(__name__)


def _json_bytes(payload: object) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def handle_request(registry: Registry, frame: Frame) -> Tuple[FrameType, bytes]:
    """Response ``(type, payload)`` for one request frame."""
    if frame.type == FrameType.LIST_REQ:
        return FrameType.LIST_RESP, _json_bytes([m.to_dict() for m in registry.list()])
    if frame.type in (FrameType.GET_MANIFEST, FrameType.GET_WEIGHTS):
        version = frame.text().strip()
        try:
            if frame.type == FrameType.GET_MANIFEST:
                return FrameType.MANIFEST, _json_bytes(registry.manifest(version).to_dict())
            return FrameType.WEIGHTS, registry.payload(version)
        except RegistryError:
            return FrameType.ERROR, f"unknown version: {version}".encode("utf-8")
    return FrameType.ERROR, f"unexpected request frame {frame.type.name}".encode("utf-8")


class _Handler(socketserver.BaseRequestHandler):
    server: "_Server"

    def handle(self) -> None:
        conn = FramedConnection(self.request)
        peer = "%s:%s" % self.client_address[:2]
        logger.debug("connection opened", extra={"fields": {"peer": peer}})
        try:
            while True:
                frame = conn.recv()
                if frame is None:
                    break
                logger.debug("request", extra={"fields": {"peer": peer, "type": frame.type.name}})
                rtype, payload = handle_request(self.server.registry, frame)
                conn.send(rtype, payload)
        except ProtocolError as exc:
            logger.warning("protocol violation from %s: %s", peer, exc)
            try:
                conn.send_error(str(exc))
            except CkmError:
                pass
        except NetworkError as exc:
            logger.warning("connection to %s failed: %s", peer, exc)
        logger.debug(
            "connection closed",
            extra={"fields": {"peer": peer, "bytes_sent": conn.bytes_sent, "bytes_received": conn.bytes_received}},
        )


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: Tuple[str, int], registry: Registry) -> None:
        self.registry = registry
        super().__init__(address, _Handler)


class ServerHandle:
    """A running server. ``address`` carries the real port when bound to port 0."""

    def __init__(self, server: _Server) -> None:
        self._server = server
        self._thread = threading.Thread(target=server.serve_forever, name="ckmp-server", daemon=True)
        self._thread.start()

    @property
    def address(self) -> Tuple[str, int]:
        host, port = self._server.server_address[:2]
        return str(host), int(port)

    @property
    def address_string(self) -> str:
        return "%s:%d" % self.address

    def wait(self, timeout: Optional[float] = None) -> bool:
        """Block until the server stops; ``False`` if ``timeout`` expired first."""
        self._thread.join(timeout)
        return not self._thread.is_alive()

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()
        logger.info("server stopped", extra={"fields": {"address": self.address_string}})

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc: object) -> None:
        self.shutdown()


def serve(registry: Registry, bind: Union[str, Tuple[str, int]] = "127.0.0.1:0") -> ServerHandle:
    """Start serving ``registry`` on a background thread."""
    address = parse_address(bind)
    try:
        server = _Server(address, registry)
    except OSError as exc:
        raise NetworkError(f"cannot bind {address[0]}:{address[1]}: {exc}") from exc
    handle = ServerHandle(server)
    logger.info("serving", extra={"fields": {"address": handle.address_string, "models": len(registry.list())}})
    return handle
