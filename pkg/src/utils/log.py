"""Logging setup shared by every module."""

import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console(stderr=True)

_configured = False


def configure_logging(level=logging.INFO):
    """Install a single RichHandler on the package root logger."""
    global _configured
    root = logging.getLogger("spectra")
    if not _configured:
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    root.setLevel(level)
    return root


def get_logger(name):
    """Logger under the package root, e.g. ``spectra.controllers.sampler``."""
    short = name[4:] if name.startswith("src.") else name
    return logging.getLogger(f"spectra.{short}")
