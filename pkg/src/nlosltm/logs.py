"""Logging setup and the per-step structured training log."""

from __future__ import annotations

import json
import logging
import math
import os
from typing import Any, Optional

_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Parent of every module logger in the package.
PACKAGE_LOGGER = __name__.rpartition(".")[0]


def configure_logging(level: Optional[str] = None) -> None:
    """Configure the package logger tree.

    The level comes from *level*, else the ``LOGLEVEL`` environment variable,
    else INFO.
    """
    name = (level or os.environ.get("LOGLEVEL", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=_FORMAT)
    logging.getLogger(PACKAGE_LOGGER).setLevel(getattr(logging, name, logging.INFO))


def _jsonable(value: Any) -> Any:
    """Replace non-finite floats by ``"inf"``/``"-inf"``/``"nan"``, recursively."""
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class StepLog:
    """Append-only JSON-lines writer, one record per training step."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
        self._fh = open(path, "a", encoding="utf-8")

    def write(self, record: dict) -> None:
        clean = {k: _jsonable(v) for k, v in record.items()}
        self._fh.write(json.dumps(clean, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "StepLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_step_log(path: str) -> list[dict]:
    """Load every record of a JSON-lines training log."""
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
