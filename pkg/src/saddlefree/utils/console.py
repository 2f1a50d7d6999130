import logging
import os
import sys

from rich.console import Console
from rich.logging import RichHandler

# --- Initialize Console with Test Detection ---
# Detect if running under pytest or in CI to disable color codes for easier parsing
is_testing = (
    "pytest" in sys.modules
    or any("pytest" in key for key in sys.modules.keys())
    or "CI" in os.environ
)
console_color_system = None if is_testing else "auto"  # None = no color codes
console = Console(color_system=console_color_system)  # type: ignore[arg-type]
error_console = Console(color_system=console_color_system, stderr=True)  # type: ignore[arg-type]
# --- End Console Init ---

PACKAGE_LOGGER = "saddlefree"


def get_logger(name: str) -> logging.Logger:
    """
    Return a logger below the package logger, installing the rich handler once.

    :param name: Dotted module name, usually ``__name__``.
    :return: The configured logger.
    """
    root = logging.getLogger(PACKAGE_LOGGER)
    if not root.handlers:
        handler = RichHandler(
            console=error_console, show_path=False, rich_tracebacks=False
        )
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
        root.setLevel(logging.WARNING)
        root.propagate = False
    if name == PACKAGE_LOGGER or name.startswith(f"{PACKAGE_LOGGER}."):
        return logging.getLogger(name)
    return logging.getLogger(f"{PACKAGE_LOGGER}.{name}")


def set_verbosity(verbose: bool) -> None:
    """Switch the package logger between WARNING and DEBUG."""
    get_logger(PACKAGE_LOGGER).setLevel(logging.DEBUG if verbose else logging.WARNING)
