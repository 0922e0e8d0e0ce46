"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage problems -> 2, data problems -> 3,
numerical failures -> 4.
"""


class GpgmError(Exception):
    """Base class for all package errors."""


class ShapeError(GpgmError, ValueError):
    """Tensor shapes or dimensions do not satisfy an operation's contract."""


class ConfigError(GpgmError, ValueError):
    """Invalid configuration value or unknown key."""


class DataError(GpgmError):
    """Malformed, truncated or inconsistent file / dataset content."""


class NumericalError(GpgmError, FloatingPointError):
    """A non-finite value appeared where the contract forbids it."""
