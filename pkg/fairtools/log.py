from __future__ import annotations

import logging
import os
import sys

_LEVEL_TAGS = {
    logging.DEBUG: "DEBUG",
    logging.INFO: "INFO",
    logging.WARNING: "WARN",
    logging.ERROR: "ERROR",
    logging.CRITICAL: "ERROR",
}


class _TagFormatter(logging.Formatter):
    """Render records as ``[WARN] message`` lines on stderr."""

    def format(self, record: logging.LogRecord) -> str:
        tag = _LEVEL_TAGS.get(record.levelno, record.levelname)
        return f"[{tag}] {record.getMessage()}"


def debug_from_env() -> bool:
    return os.getenv("FAIRTOOLS_DEBUG", "0").strip().lower() not in {"", "0", "false", "no", "off"}


def configure_logging(verbose: bool = False) -> None:
    root = logging.getLogger("fairtools")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_TagFormatter())
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if (verbose or debug_from_env()) else logging.INFO)
