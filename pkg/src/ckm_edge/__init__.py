"""ckm-edge: score-prior channel knowledge map construction, trained in the cloud, run at the edge."""

__version__ = "0.1.0"
