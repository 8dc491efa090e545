"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Raised when tensor-train shapes or ranks are incompatible."""


class SingularPivotError(RuntimeError):
    """Raised when a pivot/intersection matrix is singular beyond repair.

    Carries the offending bond index when raised inside a cross sweep.
    """

    def __init__(self, message, bond=None):
        super().__init__(message)
        self.bond = bond


class BudgetExceededError(RuntimeError):
    """Raised by a capped pricer when its evaluation budget is exhausted."""


class ConditioningError(RuntimeError):
    """Raised when a dense factorization fails even after jitter."""


class ConfigError(ValueError):
    """Raised for invalid run configurations (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Raised for unrecoverable numerical failures (CLI exit code 3)."""
