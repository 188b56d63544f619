"""Project logging utilities.

Centralized helpers to configure and retrieve loggers consistently across the
project without each module invoking ``basicConfig`` independently.

Usage (simple):
	from ckm_edge.utils.logger import configure_logging, get_logger
	configure_logging()  # safe to call multiple times
	log = get_logger(__name__)
	log.info("step %d", step, extra={"fields": {"step": step, "loss": loss}})

Environment variables:
	LOG_LEVEL   -> DEBUG | INFO | WARNING | ERROR | CRITICAL (default: INFO)
	LOG_FORMAT  -> "plain" (default) or "json" (structured single-line JSON)
	LOG_COLOR   -> "1" to enable ANSI color for levels with plain format (default auto)

Structured fields passed through ``extra={"fields": {...}}`` are merged into the
JSON record and appended as ``key=value`` pairs in plain mode. Output goes to
stderr; stdout is reserved for command results.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Union

__all__ = ["configure_logging", "get_logger", "parse_level", "timed"]

_CONFIGURED = False


def _fields(record: logging.LogRecord) -> Dict[str, Any]:
	fields = getattr(record, "fields", None)
	return fields if isinstance(fields, dict) else {}


class _JsonFormatter(logging.Formatter):
	def format(self, record: logging.LogRecord) -> str:
		data: Dict[str, Any] = {
			"level": record.levelname,
			"name": record.name,
			"message": record.getMessage(),
			"time": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
		}
		data.update(_fields(record))
		if record.exc_info:
			data["exc"] = self.formatException(record.exc_info)
		return json.dumps(data, ensure_ascii=False, default=str)


class _PlainFormatter(logging.Formatter):
	def format(self, record: logging.LogRecord) -> str:
		base = super().format(record)
		fields = _fields(record)
		if not fields:
			return base
		tail = " ".join(f"{k}={_short(v)}" for k, v in fields.items())
		return f"{base} [{tail}]"


def _short(value: Any) -> str:
	if isinstance(value, float):
		return f"{value:.6g}"
	return str(value)


_COLOR_MAP = {
	"DEBUG": "\x1b[37m",  # light gray
	"INFO": "\x1b[36m",  # cyan
	"WARNING": "\x1b[33m",  # yellow
	"ERROR": "\x1b[31m",  # red
	"CRITICAL": "\x1b[41m",  # red background
}
_RESET = "\x1b[0m"


class _ColorFormatter(_PlainFormatter):  # pragma: no cover (cosmetic)
	def format(self, record: logging.LogRecord) -> str:
		base = super().format(record)
		color = _COLOR_MAP.get(record.levelname)
		if not color:
			return base
		return f"{color}{base}{_RESET}"


def parse_level(level: Union[str, int, None]) -> int:
	"""Map a level name or number to a logging level (INFO when unknown)."""
	if level is None:
		level = os.getenv("LOG_LEVEL", "INFO")
	if isinstance(level, int):
		return level
	return getattr(logging, str(level).upper(), logging.INFO)


def configure_logging(level: Union[str, int, None] = None, force: bool = False) -> None:
	"""Configure root logging once.

	Parameters
	----------
	level: str | int | None
		Override log level (name or number). If None, derive from ``LOG_LEVEL`` env.
	force: bool
		Reconfigure handlers even if already configured.
	"""
	global _CONFIGURED
	if _CONFIGURED and not force:
		# Allow dynamic level updates
		if level is not None:
			logging.getLogger().setLevel(parse_level(level))
		return

	fmt = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
	datefmt = "%H:%M:%S"
	handler = logging.StreamHandler(sys.stderr)

	log_format = os.getenv("LOG_FORMAT", "plain").lower()
	use_color = os.getenv("LOG_COLOR", "").strip() == "1" and sys.stderr.isatty()

	if log_format == "json":
		handler.setFormatter(_JsonFormatter())
	else:
		formatter: logging.Formatter = _PlainFormatter(fmt=fmt, datefmt=datefmt)
		if use_color:
			formatter = _ColorFormatter(fmt=fmt, datefmt=datefmt)
		handler.setFormatter(formatter)

	root = logging.getLogger()
	root.handlers.clear()
	root.addHandler(handler)
	root.setLevel(parse_level(level))
	_CONFIGURED = True


def get_logger(name: str) -> logging.Logger:
	"""Return a module/component logger.

	Ensures global configuration is applied before first use.
	"""
	if not _CONFIGURED:
		configure_logging()
	return logging.getLogger(name)


@contextmanager
def timed(logger: logging.Logger, label: str, level: int = logging.INFO) -> Iterator[Dict[str, float]]:
	"""Log the wall time of the enclosed block; yields a dict filled with ``seconds``."""
	out: Dict[str, float] = {}
	start = time.perf_counter()
	try:
		yield out
	finally:
		out["seconds"] = time.perf_counter() - start
		logger.log(level, "%s took %.3fs", label, out["seconds"], extra={"fields": {"stage": label, "seconds": out["seconds"]}})
