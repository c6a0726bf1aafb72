"""Structured logging for apwdg.

All events go to stderr through structlog, keeping stdout and the CSV
artifacts clean. Every CLI invocation binds a run id, so the events of one
solve, sweep or SCF run can be grepped together.

    logger = get_logger(__name__)
    logger.info("matrices_assembled", total_dim=1537, duration_ms=812)
"""

import logging
import sys
from contextvars import ContextVar
from typing import Any

import numpy as np
import structlog

_run_id: ContextVar[str | None] = ContextVar("run_id", default=None)


def set_run_id(run_id: str | None) -> None:
    """Bind the run id for the current context (None clears it)."""
    _run_id.set(run_id)


def get_run_id() -> str | None:
    return _run_id.get()


def add_run_id(
    logger: structlog.types.WrappedLogger,
    method_name: str,
    event_dict: dict[str, Any],
) -> dict[str, Any]:
    """Processor attaching the current run id."""
    run_id = _run_id.get()
    if run_id is not None:
        event_dict["run_id"] = run_id
    return event_dict


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, np.ndarray):
        return value.tolist() if value.size <= 16 else f"<array shape={value.shape}>"
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def numpy_to_builtin(
    logger: structlog.types.WrappedLogger,
    method_name: str,
    event_dict: dict[str, Any],
) -> dict[str, Any]:
    """Processor turning numpy scalars and small arrays into JSON-safe values.

    Large arrays are replaced by a shape marker; matrices belong in
    `matrices.npz`, not in the log.
    """
    return {key: _plain(value) for key, value in event_dict.items()}


def configure_logging(log_level: str = "INFO", json_output: bool = True) -> None:
    """Configure structlog over stdlib logging.

    Args:
        log_level: DEBUG, INFO, WARNING or ERROR
        json_output: JSON lines when True, coloured console output otherwise
    """
    level = getattr(logging, log_level.upper())
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=level, force=True)
    # TruncationWarning goes through warnings.warn and should land in the same stream
    logging.captureWarnings(True)

    processors: list[structlog.types.Processor] = [
        structlog.stdlib.filter_by_level,
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.TimeStamper(fmt="iso"),
        add_run_id,
        numpy_to_builtin,
    ]
    if json_output:
        processors += [structlog.processors.format_exc_info, structlog.processors.JSONRenderer()]
    else:
        processors.append(structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty()))

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


def get_logger(name: str | None = None) -> structlog.stdlib.BoundLogger:
    """Structured logger for `name` (usually the calling module's __name__)."""
    return structlog.get_logger(name)
