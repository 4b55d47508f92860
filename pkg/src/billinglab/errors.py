"""Exception types shared across the package."""


class BillingLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BillingLabError):
    """Invalid configuration values (rates out of range, bad mixes, ...)."""


class IngestionError(BillingLabError):
    """Malformed input file; the message names the offending row or column."""


class SchemaError(BillingLabError):
    """Feature-matrix column mismatch between fit-time and apply-time."""


class ShapeError(BillingLabError):
    """Tensor shape mismatch; the message names both shapes."""


class ArgumentError(BillingLabError):
    """Invalid argument to an operation (bad period, k > n, ...)."""


class FitError(BillingLabError):
    """A model cannot be fitted on the given data."""


class PreconditionError(BillingLabError):
    """Input data violates a documented precondition of the operation."""


class TrainingDivergedError(BillingLabError):
    """Non-finite gradients encountered; training aborted."""


class ComparisonError(BillingLabError):
    """Two experiment runs are not comparable (different splits or presets)."""
