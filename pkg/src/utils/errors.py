"""
Error Types Module

This module defines the exceptions raised across the toolkit and the mapping
from exception type to the command-line exit code contract:

    0 success, 1 usage error, 2 validation error, 3 internal error
"""

from typing import Iterable, Sequence


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_INTERNAL = 3


class SegEnsembleError(Exception):
    """Base class for every error raised on purpose by this package."""


class UsageError(SegEnsembleError):
    """The command was invoked incorrectly (bad flags, wrong input kind)."""

    def __init__(self, message: str, hint: str = None):
        self.raw_message = message
        self.hint = hint
        if hint:
            message = f"{message}\n  hint: {hint}"
        super().__init__(message)

    def __reduce__(self):
        return (type(self), (self.raw_message, self.hint))


class ValidationError(SegEnsembleError, ValueError):
    """Input data violates a documented invariant."""


class InvalidArgumentError(ValidationError):
    pass


class GeometryMismatchError(ValidationError):
    """Volumes that must share a grid do not."""

    def __init__(self, message: str, paths: Sequence[str] = ()):
        self.paths = list(paths)
        if self.paths:
            message = f"{message}: {', '.join(self.paths)}"
        super().__init__(message)


class VolumeParseError(ValidationError):
    """A volume header is missing a key or carries an unusable value."""

    def __init__(self, key: str, detail: str, path: str = None):
        self.key = key
        self.detail = detail
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"header key '{key}'{where}: {detail}")

    def __reduce__(self):
        return (type(self), (self.key, self.detail, self.path))


class VolumeTruncatedError(ValidationError):
    pass


class EmptyStructureError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    pass


class OverlapError(ValidationError):
    """Two synthetic organs share voxels."""

    def __init__(self, first: int, second: int, voxels: int):
        self.pair = (first, second)
        self.voxels = voxels
        super().__init__(
            f"organs {first} and {second} overlap in {voxels} voxels")

    def __reduce__(self):
        return (type(self), (self.pair[0], self.pair[1], self.voxels))


class KeyMismatchError(ValidationError):
    """Tables that must be joined on the same keys do not share them."""

    def __init__(self, message: str, missing: Iterable = ()):
        self.missing = list(missing)
        shown = ', '.join(str(k) for k in self.missing[:20])
        more = f" (+{len(self.missing) - 20} more)" if len(self.missing) > 20 else ""
        super().__init__(f"{message}: {shown}{more}")


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception to the documented process exit code.

    Args:
        exc (BaseException): The exception that ended the command

    Returns:
        int: 1 for usage errors, 2 for validation errors, 3 otherwise
    """
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    return EXIT_INTERNAL
