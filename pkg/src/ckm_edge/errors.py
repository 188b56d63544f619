"""Exception hierarchy for ckm-edge.

Every error raised on purpose by the package derives from ``CkmError`` and carries
the process exit code the CLI should use. Usage errors stay plain ``ValueError`` /
``TypeError`` (exit 2), so callers outside the CLI can keep catching built-ins.
"""

from __future__ import annotations

from typing import Optional

__all__ = [
    "CkmError",
    "EncodingError",
    "FormatError",
    "IntegrityError",
    "RegistryError",
    "ProtocolError",
    "NetworkError",
    "NumericalError",
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_DATA",
    "EXIT_NETWORK",
    "EXIT_NUMERICAL",
]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NETWORK = 4
EXIT_NUMERICAL = 5


class CkmError(Exception):
    """Base class. ``hint`` is an optional one-line remedy shown by the CLI."""

    exit_code: int = EXIT_DATA

    def __init__(self, message: str, hint: Optional[str] = None) -> None:
        super().__init__(message)
        self.hint = hint

    def __str__(self) -> str:
        base = super().__str__()
        return f"{base} ({self.hint})" if self.hint else base


class EncodingError(CkmError, ValueError):
    """Pixel encoding violated (gain range, AoA-sine gap, grid invariants)."""


class FormatError(CkmError, ValueError):
    """Malformed CKMG / CKMO / CKMW file: magic, truncation, CRC, shapes."""


class IntegrityError(CkmError):
    """Content hash does not match its manifest."""


class RegistryError(CkmError):
    """Registry state problem: duplicate or unknown version, corrupt index."""


class ProtocolError(CkmError):
    exit_code = EXIT_NETWORK


class NetworkError(CkmError):
    exit_code = EXIT_NETWORK


class NumericalError(CkmError, ArithmeticError):
    """NaN / inf during training or sampling."""

    exit_code = EXIT_NUMERICAL
