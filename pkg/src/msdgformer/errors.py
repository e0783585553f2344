"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
file-format problems exit 3, numeric failures exit 4.
"""


class MsdgError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MsdgError):
    """Tensor shapes or extents violate an operation's contract."""


class ConfigError(MsdgError):
    """Invalid or inconsistent configuration values."""


class UsageError(MsdgError):
    """An API was called in a way its contract forbids."""


class FormatError(MsdgError):
    """A serialized file is malformed. Carries the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(MsdgError):
    """A numerical routine failed (non-convergence, NaN loss, ...)."""
