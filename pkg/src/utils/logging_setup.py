"""Logger configuration for the command-line tool."""

import logging
import sys

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def level_for(verbosity: int) -> int:
    """0 -> WARNING, 1 -> INFO, 2 or more -> DEBUG."""
    if verbosity <= 0:
        return logging.WARNING
    if verbosity == 1:
        return logging.INFO
    return logging.DEBUG


def configure_logging(verbosity: int = 0) -> None:
    """Send package log records to stderr at the level chosen by `-v` count."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    for existing in list(root.handlers):
        if getattr(existing, '_seg_ensemble', False):
            root.removeHandler(existing)
    handler._seg_ensemble = True
    root.addHandler(handler)
    root.setLevel(level_for(verbosity))
