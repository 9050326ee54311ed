"""Exception hierarchy shared across the package.

The CLI maps these to stable exit codes: UsageError (and subclasses) -> 1,
InputError -> 2, NumericError -> 3.
"""


class EmofuseError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(EmofuseError):
    """An API or command was called in a way that can never be valid."""


class ConfigError(UsageError):
    """A configuration object violates its own constraints."""


class InputError(EmofuseError):
    """Input data (files, signals, sequences) failed validation."""


class ShapeError(InputError):
    """Array shapes are incompatible for the requested operation."""


class NumericError(EmofuseError):
    """A computation produced or received non-finite values."""
