"""Exception types shared across picolab."""


class PicoError(Exception):
    """Base class for all picolab errors."""


class DimensionError(PicoError, ValueError):
    """Operand shapes do not conform."""


class ValidationError(PicoError, ValueError):
    """An argument violates a documented precondition."""


class StateError(PicoError, RuntimeError):
    """An operation was invoked in the wrong mode (e.g. backward without a tape)."""


class DeterminismError(PicoError, RuntimeError):
    """A function expected to be deterministic returned different results."""


class DegenerateDataError(PicoError, ValueError):
    """Input data carries no usable variance."""


class NumericalError(PicoError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""

    def __init__(self, message, **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({detail})"
        super().__init__(message)
