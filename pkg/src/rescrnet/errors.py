"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``NumericalError`` -> 3.
"""


class ResCRNetError(Exception):
    """Base class for all package errors."""


class ShapeError(ResCRNetError, ValueError):
    """Tensor shapes are incompatible.

    ``dim`` names the offending dimension (``"channels"``, ``"rows"``, ...).
    """

    def __init__(self, message: str, dim: str | None = None):
        super().__init__(message)
        self.dim = dim


class ConfigError(ResCRNetError, ValueError):
    """Invalid configuration value; ``field`` names the key at fault."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DataError(ResCRNetError):
    """Input data is missing, undecodable, or violates a dataset invariant."""


class NumericalError(ResCRNetError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class CheckpointError(ResCRNetError):
    """A weights file is truncated, from another version, or does not fit the model."""


class CycleError(ResCRNetError, RuntimeError):
    """The autodiff graph contains a cycle."""
