"""Logging configuration for the command line and the explorer app."""

import logging
import sys
from pathlib import Path
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_quiet = False


def configure_logging(level: str = "INFO", log_file: Optional[Path] = None, quiet: bool = False):
    """Install one stream handler (and optionally a file handler) on the root logger."""
    global _quiet
    _quiet = quiet

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)

    formatter = logging.Formatter(LOG_FORMAT)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(formatter)
    root.addHandler(stream)

    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))


def progress_enabled() -> bool:
    """tqdm bars only when attached to a terminal and not silenced."""
    return not _quiet and sys.stderr.isatty()
