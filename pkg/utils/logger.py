"""
Logging for the PatchGrad training engine.

Every module calls setup_logger(__name__) once at import. Console output goes
to stdout; a dated log file is kept under PATCHGRAD_LOG_DIR (default logs/).
"""

import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

LOGS_DIR = Path(os.environ.get("PATCHGRAD_LOG_DIR", Path(__file__).parent.parent / "logs"))

CONSOLE_FORMAT = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s', datefmt='%H:%M:%S')
FILE_FORMAT = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s',
                                datefmt='%Y-%m-%d %H:%M:%S')

def _file_handler(level: int) -> Optional[logging.Handler]:
    try:
        LOGS_DIR.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(LOGS_DIR / f"patchgrad_{datetime.now():%Y%m%d}.log", encoding='utf-8')
    except OSError:
        return None
    handler.setLevel(level)
    handler.setFormatter(FILE_FORMAT)
    return handler

def setup_logger(name: str, level: int = logging.INFO) -> logging.Logger:
    """
    Set up a logger with a console handler and, when possible, a file handler.

    Args:
        name: Logger name (usually module name)
        level: Logging level

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    if logger.handlers:
        return logger

    console = logging.StreamHandler(sys.stdout)
    console.setLevel(level)
    console.setFormatter(CONSOLE_FORMAT)
    logger.addHandler(console)

    handler = _file_handler(level)
    if handler is None:
        logger.warning(f"Log directory {LOGS_DIR} not writable, logging to console only")
    else:
        logger.addHandler(handler)
    return logger

def level_from_name(name: str, default: int = logging.INFO) -> int:
    """'DEBUG', 'info', ... to a logging level; unknown names give the default."""
    level = logging.getLevelName(str(name).upper())
    return level if isinstance(level, int) else default

def set_global_level(level: int) -> None:
    """Apply a logging level to every logger created through setup_logger."""
    for logger in logging.Logger.manager.loggerDict.values():
        if isinstance(logger, logging.Logger) and logger.handlers:
            logger.setLevel(level)
            for handler in logger.handlers:
                handler.setLevel(level)
