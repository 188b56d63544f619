"""Command line interface (``ckm``)."""

from ckm_edge.cli.main import build_argument_parser, main

__all__ = ["build_argument_parser", "main"]
