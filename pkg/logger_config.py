#!/usr/bin/env python3
"""
Centralized logging configuration for whisperline
"""

import logging
from pathlib import Path
from config import LOG_LEVEL, LOG_FORMAT, LOG_FILE, LOG_OUTPUT


def _console_handler(level: int, formatter: logging.Formatter) -> logging.Handler:
    handler = logging.StreamHandler()
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def _file_handler(level: int, formatter: logging.Formatter) -> logging.Handler:
    log_file_path = Path(LOG_FILE)
    log_file_path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(LOG_FILE, encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def setup_logger(name: str) -> logging.Logger:
    """
    Set up a logger with configurable output options

    Args:
        name: The name of the module (usually __name__)

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(name)

    # Only configure if not already configured
    if not logger.handlers:
        level = getattr(logging, LOG_LEVEL.upper(), logging.INFO)
        logger.setLevel(level)
        formatter = logging.Formatter(LOG_FORMAT)

        output_mode = LOG_OUTPUT.lower()
        if output_mode == "console":
            logger.addHandler(_console_handler(level, formatter))
        elif output_mode == "file":
            logger.addHandler(_file_handler(level, formatter))
        else:
            # "both", and the fallback for an invalid setting
            logger.addHandler(_console_handler(level, formatter))
            logger.addHandler(_file_handler(level, formatter))

        # Prevent propagation to avoid duplicate logs
        logger.propagate = False

    return logger
