"""
Structured logging configuration for the TGVFM desk pipeline.

Supports both JSON (for long unattended runs) and human-readable (for the
terminal) formats. Configure via environment variables:
- TGVFM_LOG_FORMAT: 'json' or 'text' (default: 'text')
- TGVFM_LOG_LEVEL: DEBUG, INFO, WARNING, ERROR (default: 'INFO')

Training runs additionally attach a file handler inside their run directory
with attach_run_log(), so every run keeps its own log next to metrics.log.
"""

import json
import logging
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

UTC = timezone.utc  # alias of datetime.UTC (3.11+)

# LogRecord attributes that are never treated as context fields
_STANDARD_ATTRS = frozenset(
    {
        "name",
        "msg",
        "args",
        "created",
        "filename",
        "funcName",
        "levelname",
        "levelno",
        "lineno",
        "module",
        "msecs",
        "pathname",
        "process",
        "processName",
        "relativeCreated",
        "stack_info",
        "exc_info",
        "exc_text",
        "thread",
        "threadName",
        "taskName",
        "message",
    }
)

RUN_LOG_NAME = "run.log"


def _context_fields(record: logging.LogRecord) -> dict[str, Any]:
    """Extract the extra={...} context attached to a record."""
    return {
        key: value
        for key, value in record.__dict__.items()
        if key not in _STANDARD_ATTRS and not key.startswith("_")
    }


def _jsonable(value: Any) -> Any:
    """Convert numpy/torch scalars and non-finite floats to JSON-safe values."""
    if hasattr(value, "item") and callable(value.item):
        try:
            value = value.item()
        except (TypeError, ValueError, RuntimeError):
            return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    try:
        json.dumps(value)
        return value
    except (TypeError, ValueError):
        return str(value)


class JSONFormatter(logging.Formatter):
    """
    JSON formatter for structured logging.

    Outputs log records as single-line JSON objects with:
    - timestamp (ISO 8601, UTC)
    - level, logger, message
    - every extra context field passed to the log call
    """

    def format(self, record: logging.LogRecord) -> str:
        log_data: dict[str, Any] = {
            "timestamp": datetime.now(UTC).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        for key, value in _context_fields(record).items():
            log_data[key] = _jsonable(value)

        return json.dumps(log_data)


class TextFormatter(logging.Formatter):
    """
    Human-readable formatter for the terminal.

    Format: timestamp - logger - level - message [context_key=value ...]
    Floats are shortened to 6 significant digits.
    """

    def format(self, record: logging.LogRecord) -> str:
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        base_msg = f"{timestamp} - {record.name} - {record.levelname} - {record.getMessage()}"

        extra_parts = []
        for key, value in _context_fields(record).items():
            value = _jsonable(value)
            if isinstance(value, float):
                value = f"{value:.6g}"
            extra_parts.append(f"{key}={value}")

        if extra_parts:
            base_msg += f" [{', '.join(extra_parts)}]"
        if record.exc_info:
            base_msg += f"\n{self.formatException(record.exc_info)}"

        return base_msg


def get_log_level() -> int:
    """Get log level from environment variable."""
    level_str = os.environ.get("TGVFM_LOG_LEVEL", "INFO").upper()
    level_map = {
        "DEBUG": logging.DEBUG,
        "INFO": logging.INFO,
        "WARNING": logging.WARNING,
        "ERROR": logging.ERROR,
        "CRITICAL": logging.CRITICAL,
    }
    return level_map.get(level_str, logging.INFO)


def get_log_format() -> str:
    """Get log format from environment variable."""
    return os.environ.get("TGVFM_LOG_FORMAT", "text").lower()


def _make_formatter(fmt: str) -> logging.Formatter:
    return JSONFormatter() if fmt == "json" else TextFormatter()


def setup_logging(
    log_dir: str | None = "logs",
    verbose: bool = False,
    log_format: str | None = None,
    log_level: int | None = None,
) -> None:
    """
    Setup logging with either JSON or text output.

    Args:
        log_dir: Directory for tgvfm.log (created if missing); None disables the file
        verbose: If True, sets level to DEBUG (overrides TGVFM_LOG_LEVEL)
        log_format: 'json' or 'text' (overrides TGVFM_LOG_FORMAT)
        log_level: Logging level (overrides the env var and verbose flag)
    """
    if log_level is not None:
        level = log_level
    elif verbose:
        level = logging.DEBUG
    else:
        level = get_log_level()

    formatter = _make_formatter(log_format if log_format is not None else get_log_format())

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    if log_dir is not None:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(Path(log_dir) / "tgvfm.log")
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    # Plotting and image IO are chatty at DEBUG
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)
    logging.getLogger("urllib3").setLevel(logging.WARNING)


def attach_run_log(run_dir: str | Path) -> logging.Handler:
    """
    Mirror all log output into <run_dir>/run.log as JSON lines.

    Returns the handler so the caller can detach it with detach_run_log()
    once the run finishes.
    """
    path = Path(run_dir) / RUN_LOG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path)
    handler.setFormatter(JSONFormatter())
    logging.getLogger().addHandler(handler)
    return handler


def detach_run_log(handler: logging.Handler) -> None:
    """Remove and close a handler installed by attach_run_log()."""
    logging.getLogger().removeHandler(handler)
    handler.close()


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger instance with the specified name.

    Use extra={'key': 'value'} when logging to add context fields.

    Example:
        logger = get_logger(__name__)
        logger.info("Simulated sequence", extra={"seed": 3, "events": 41230})
    """
    return logging.getLogger(name)
