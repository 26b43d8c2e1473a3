"""Exception types raised across the package."""


class SafetrackError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SafetrackError, ValueError):
    pass


class ModelNotFound(SafetrackError, KeyError):
    pass


class UnsupportedModel(SafetrackError, TypeError):
    pass


class OutOfDomain(SafetrackError, ValueError):
    """A query point left the grid along a non-periodic dimension."""

    def __init__(self, dim, value, lo, hi):
        self.dim = dim
        self.value = value
        super().__init__(f"coordinate {value!r} outside [{lo}, {hi}] in dimension {dim}")


class NumericalFailure(SafetrackError, ArithmeticError):
    def __init__(self, step, message="non-finite values in solver step"):
        self.step = step
        super().__init__(f"{message} (step {step})")


class InvalidDecomposition(SafetrackError, ValueError):
    pass


class DegenerateDomain(SafetrackError, ValueError):
    pass


class DegenerateTEB(SafetrackError, ValueError):
    """Sublevel set is empty; raise the slack."""


class GoalTooSmall(SafetrackError, ValueError):
    pass


class PlannerStuck(SafetrackError, RuntimeError):
    pass


class InitFailure(SafetrackError, RuntimeError):
    pass


class SensingTooShort(SafetrackError, ValueError):
    pass


class CorruptFile(SafetrackError, IOError):
    pass


class HashMismatch(SafetrackError, ValueError):
    pass


class ConfigError(SafetrackError, ValueError):
    pass
