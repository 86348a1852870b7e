"""
Logger - Structured logging for potgame.
"""

import logging
import sys
from typing import Any

import structlog

from potgame.config import settings


class PotGameLogger:
    """Process-wide structlog configuration with named loggers."""

    _instance: "PotGameLogger | None" = None
    _initialized: bool

    def __new__(cls) -> "PotGameLogger":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self) -> None:
        if self._initialized:
            return

        self.loggers: dict[str, Any] = {}
        self._initialized = True

        level = logging.getLevelName(settings.LOG_LEVEL.upper())
        if not isinstance(level, int):
            level = logging.INFO

        renderer: Any
        if settings.LOG_FORMAT == "json":
            renderer = structlog.processors.JSONRenderer()
        else:
            renderer = structlog.dev.ConsoleRenderer(colors=False)

        # stdout is reserved for command output
        structlog.configure(
            processors=[
                structlog.contextvars.merge_contextvars,
                structlog.processors.add_log_level,
                structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S"),
                renderer,
            ],
            wrapper_class=structlog.make_filtering_bound_logger(level),
            logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
            cache_logger_on_first_use=True,
        )

    def get_logger(self, name: str) -> Any:
        if name not in self.loggers:
            self.loggers[name] = structlog.get_logger().bind(logger=name)
        return self.loggers[name]


_logger_instance = PotGameLogger()


def get_logger(name: str) -> Any:
    """Get a logger instance."""
    return _logger_instance.get_logger(name)
