"""
Logging configuration for the nonlocal lab.
"""

import logging
import sys
from pathlib import Path
from typing import Dict, Optional, TextIO

from app.config.settings import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class Logger:
    """Centralized logging configuration."""

    _loggers: Dict[str, logging.Logger] = {}

    @classmethod
    def get_logger(cls, name: str) -> logging.Logger:
        """Get or create a logger instance."""
        if name not in cls._loggers:
            logger = logging.getLogger(name)
            cls._setup_logger(logger)
            cls._loggers[name] = logger
        return cls._loggers[name]

    @classmethod
    def _formatter(cls) -> logging.Formatter:
        return logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT)

    @classmethod
    def _setup_logger(cls, logger: logging.Logger) -> None:
        """Setup logger with proper configuration."""
        logger.setLevel(getattr(logging, settings.log_level.upper()))
        logger.handlers.clear()

        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(cls._formatter())
        logger.addHandler(console_handler)

        # Long experiment runs keep a file trail in production
        if settings.environment == "production":
            log_dir = Path("logs")
            log_dir.mkdir(exist_ok=True)

            file_handler = logging.FileHandler(log_dir / f"{settings.app_name}.log")
            file_handler.setFormatter(cls._formatter())
            logger.addHandler(file_handler)

        logger.propagate = False

    @classmethod
    def setup_root_logger(cls, stream: Optional[TextIO] = None) -> None:
        """Setup root logger configuration; the CLI keeps stdout for results."""
        root_logger = logging.getLogger()
        root_logger.setLevel(getattr(logging, settings.log_level.upper()))
        root_logger.handlers.clear()

        console_handler = logging.StreamHandler(stream or sys.stdout)
        console_handler.setFormatter(cls._formatter())
        root_logger.addHandler(console_handler)
