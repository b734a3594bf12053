"""Exception types shared across the package."""


class DestatError(Exception):
    """Base class for errors raised by this package."""


class ShapeMismatchError(DestatError, ValueError):
    """Operands have incompatible shapes; the message names both shapes."""


class NumericalError(DestatError, FloatingPointError):
    """A computation received or produced non-finite values."""


class EmptyWindowError(DestatError, ValueError):
    """A reduction or window operation received zero rows."""


class DataValidationError(DestatError, ValueError):
    """Input data violates a documented precondition."""


class ConfigurationError(DestatError, ValueError):
    """A configuration value or combination is invalid."""


class DegenerateSeriesError(DestatError, ValueError):
    """A series is too short, constant, or collinear for the requested statistic."""


class AssumptionViolationError(DestatError, ValueError):
    """An analytic precondition (e.g. shared column variance) does not hold."""


class TrainingDivergenceError(DestatError, RuntimeError):
    """The training loss became non-finite; message carries epoch and batch."""


class ModelExecutionError(DestatError, RuntimeError):
    """A sub-module failed inside the model forward; message carries the layer."""


class CheckpointError(DestatError, ValueError):
    """A checkpoint file is missing keys, malformed, or shape-incompatible."""
