"""
Toolkit Utilities Package

This package contains error types, logging setup, path conventions, key
checks and report writers.
"""

from .errors import (
    SegEnsembleError,
    UsageError,
    ValidationError,
    exit_code_for
)

from .missing_finder import (
    find_missing_keys,
    require_matching_keys
)

__all__ = [
    'SegEnsembleError',
    'UsageError',
    'ValidationError',
    'exit_code_for',
    'find_missing_keys',
    'require_matching_keys'
]
