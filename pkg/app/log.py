"""
Logging setup.
Plain text lines by default, JSON-lines records when running verbose.
"""

import json
import logging
import sys
from datetime import datetime, timezone
from typing import Optional

PLAIN_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Attributes every LogRecord has; anything else came in through `extra=`.
_RESERVED = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonLinesFormatter(logging.Formatter):
    """Render each record as one JSON object per line."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "ts": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RESERVED and not key.startswith("_"):
                payload[key] = value
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str, sort_keys=True)


def setup_logging(verbose: bool = False, level: Optional[str] = None) -> None:
    """
    Configure the root logger for CLI runs.

    Args:
        verbose: Emit DEBUG-level JSON-lines records instead of plain text
        level: Explicit level name overriding the default (INFO, or DEBUG when verbose)
    """
    handler = logging.StreamHandler(sys.stderr)
    if verbose:
        handler.setFormatter(JsonLinesFormatter())
    else:
        handler.setFormatter(logging.Formatter(PLAIN_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel((level or ("DEBUG" if verbose else "INFO")).upper())
