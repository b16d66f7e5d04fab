"""Exception types shared across the package."""


class ScganError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ScganError, ValueError):
    """Invalid configuration value, unknown key or unsupported option."""


class DimensionError(ScganError, ValueError):
    """A tensor does not have the shape an operation requires."""


class NumericError(ScganError, ArithmeticError):
    """A loss or metric became NaN or infinite."""


class UnsupportedOracleError(ScganError, ValueError):
    """No ground-truth translation is available for the requested input."""


class TrainingDiverged(NumericError):
    """Raised by the trainer when a step produces a non-finite loss."""

    def __init__(self, message: str, last_checkpoint: str | None = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
