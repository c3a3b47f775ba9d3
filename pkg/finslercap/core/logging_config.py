"""Structured logging configuration."""

from __future__ import annotations

import logging
import sys

import structlog
from structlog.types import EventDict, Processor


def add_log_level(logger: logging.Logger, method_name: str, event_dict: EventDict) -> EventDict:
    """Add log level to event dict."""
    if method_name == "warn":
        method_name = "warning"
    event_dict["level"] = method_name.upper()
    return event_dict


def add_timestamp(logger: logging.Logger, method_name: str, event_dict: EventDict) -> EventDict:
    """Add timestamp to event dict."""
    from datetime import datetime, timezone
    event_dict["timestamp"] = datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")
    return event_dict


def setup_logging(
    log_level: str = "INFO",
    use_json: bool = False,
    include_caller_info: bool = False,
    deterministic: bool = False,
) -> None:
    """Setup structured logging for the command-line tools.

    Log records go to stderr so that stdout stays reserved for JSON reports.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        use_json: If True, output JSON lines. If False, use colored console output.
        include_caller_info: If True, include stack info and formatted exceptions
        deterministic: If True, omit timestamps so repeated runs log identically
    """
    level = getattr(logging, log_level.upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"Unknown log level '{log_level}'")

    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=level,
        force=True,
    )

    # numpy/scipy warnings are routed through the warnings module; keep them quiet
    logging.getLogger("py.warnings").setLevel(logging.ERROR)

    processors: list[Processor] = [structlog.contextvars.merge_contextvars]
    if not deterministic:
        processors.append(add_timestamp)
    processors.extend([add_log_level, structlog.stdlib.add_logger_name])

    if include_caller_info:
        processors.append(structlog.processors.StackInfoRenderer())
        processors.append(structlog.processors.format_exc_info)

    if use_json:
        processors.append(structlog.processors.JSONRenderer(sort_keys=True))
    else:
        processors.append(structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty()))

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    """Get a structured logger instance.

    Example:
        logger = get_logger(__name__)
        logger.info("ncg_converged", iterations=120, final_grad=3.1e-10)
    """
    return structlog.get_logger(name)
