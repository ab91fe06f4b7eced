"""One-JSON-object-per-line logging on stderr."""

from __future__ import annotations

import json
import logging
import sys
import time

ROOT = "lmv_rpa"


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        detail = getattr(record, "detail", None)
        if detail is None:
            detail = record.getMessage()
        line = {
            "ts": int(record.created * 1000),
            "level": record.levelname.lower(),
            "event": getattr(record, "event", record.name),
            "document_id": getattr(record, "document_id", None),
            "detail": detail,
        }
        if record.exc_info:
            line["exc"] = self.formatException(record.exc_info)
        return json.dumps(line, ensure_ascii=False, default=str)


def configure(level: str = "info", stream=None) -> logging.Logger:
    logger = logging.getLogger(ROOT)
    for h in list(logger.handlers):
        if getattr(h, "_lmv_rpa", False):
            logger.removeHandler(h)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    handler._lmv_rpa = True  # type: ignore[attr-defined]
    logger.addHandler(handler)
    logger.setLevel(level.upper())
    logger.propagate = False
    return logger


def event(logger: logging.Logger, name: str, detail: object = None, document_id: str | None = None, level: int = logging.INFO) -> None:
    logger.log(level, "%s", name if detail is None else detail, extra={"event": name, "document_id": document_id, "detail": detail})


def now_ms() -> int:
    return int(time.time() * 1000)
