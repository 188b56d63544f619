"""Cloud registry, CKMP wire protocol and edge client."""

from ckm_edge.cloud.client import EdgeClient, ModelCache, edge_construct, fetch_model
from ckm_edge.cloud.protocol import Frame, FramedConnection, FrameType, encode_frame, read_frame
from ckm_edge.cloud.registry import LATEST, ModelManifest, Registry, publish_model
from ckm_edge.cloud.server import ServerHandle, serve

__all__ = [
    "LATEST",
    "EdgeClient",
    "Frame",
    "FrameType",
    "FramedConnection",
    "ModelCache",
    "ModelManifest",
    "Registry",
    "ServerHandle",
    "edge_construct",
    "encode_frame",
    "fetch_model",
    "publish_model",
    "read_frame",
    "serve",
]
