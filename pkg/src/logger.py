"""
Logging setup for every trustplane service and tool.

The CA, the attestation agent, the controller and the CLI all log through the
same root configuration so a single run (say, a full bench sweep) ends up in
one readable stream:

- service start/stop and enrollment stages at INFO
- CA rejections, refused agent connections, failed handshakes at WARNING
- per-packet chatter at DEBUG only

Usage:
    from src.logger import get_logger
    logger = get_logger(__name__)
    logger.info("CA listening on %s", endpoint)
"""

import logging
import sys
from pathlib import Path
from typing import Optional

DEFAULT_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Handlers we installed, so a second setup_logging() replaces instead of stacking
_installed_handlers: list = []


def setup_logging(
    level: str = "INFO",
    log_file: Optional[str] = None,
    format_string: Optional[str] = None
) -> None:
    """
    Set up logging for the entire application.

    Call this once at the start of a command. Calling it again swaps the
    handlers out, which the test-suite and the CLI both rely on.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR)
        log_file: Optional file to save logs to
        format_string: Custom format for log messages
    """
    if format_string is None:
        format_string = DEFAULT_FORMAT

    numeric_level = getattr(logging, level.upper(), logging.INFO)
    formatter = logging.Formatter(format_string, datefmt=DATE_FORMAT)

    root_logger = logging.getLogger()
    for handler in _installed_handlers:
        root_logger.removeHandler(handler)
        handler.close()
    _installed_handlers.clear()

    root_logger.setLevel(numeric_level)

    # stderr keeps report output on stdout clean
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(numeric_level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)
    _installed_handlers.append(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(numeric_level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)
        _installed_handlers.append(file_handler)


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger for a specific module.

    Args:
        name: Usually __name__ (the module name)

    Returns:
        A logger instance
    """
    return logging.getLogger(name)


def short_hex(value: bytes) -> str:
    """First 8 hex digits of a nonce or digest, safe to put in a log line."""
    return value[:4].hex()
