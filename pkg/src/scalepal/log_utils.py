"""Logging setup for the command-line tool."""

import logging
import sys
from contextlib import contextmanager
from typing import Iterator, List, Optional

from scalepal.color_utils import ColorConfig, ColorScheme

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"

LEVEL_SCHEMES = {
    logging.DEBUG: ColorScheme.DEBUG,
    logging.INFO: ColorScheme.INFO,
    logging.WARNING: ColorScheme.WARNING,
    logging.ERROR: ColorScheme.ERROR,
    logging.CRITICAL: ColorScheme.ERROR,
}


class StderrHandler(logging.StreamHandler):
    """Stream handler that writes to whatever sys.stderr is when a record arrives."""

    def __init__(self):
        super().__init__(sys.stderr)

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


class ColorFormatter(logging.Formatter):
    """Formatter that colors whole records by level."""

    def __init__(self, color_config: ColorConfig, fmt: str = LOG_FORMAT):
        super().__init__(fmt)
        self.color_config = color_config

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        scheme = LEVEL_SCHEMES.get(record.levelno, ColorScheme.INFO)
        return self.color_config.colorize(message, scheme)


def configure_logging(verbose: bool = False, color_config: Optional[ColorConfig] = None,
                      stream=None) -> logging.Handler:
    """
    Install a single stderr handler on the package logger.

    Args:
        verbose: Log at DEBUG instead of WARNING.
        color_config: Colors for the formatter; auto-detected on stderr if omitted.
        stream: Stream to log to (default: stderr).

    Returns:
        The installed handler.
    """
    if color_config is None:
        color_config = ColorConfig(stream=stream if stream is not None else sys.stderr)

    logger = logging.getLogger("scalepal")
    for handler in list(logger.handlers):
        if getattr(handler, "_scalepal_handler", False):
            logger.removeHandler(handler)

    handler = logging.StreamHandler(stream) if stream is not None else StderrHandler()
    handler.setFormatter(ColorFormatter(color_config))
    handler._scalepal_handler = True  # type: ignore[attr-defined]
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.WARNING)
    return handler


class WarningCollector(logging.Handler):
    """Handler that keeps warning messages for the report."""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


@contextmanager
def collect_warnings() -> Iterator[WarningCollector]:
    """Collect package warnings emitted inside the block, whatever the log level."""
    logger = logging.getLogger("scalepal")
    collector = WarningCollector()
    previous = logger.level
    logger.addHandler(collector)
    if logger.getEffectiveLevel() > logging.WARNING:
        logger.setLevel(logging.WARNING)
    try:
        yield collector
    finally:
        logger.removeHandler(collector)
        logger.setLevel(previous)
