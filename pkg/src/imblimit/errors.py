"""Exception types shared across the package."""


class DegenerateWeightError(ValueError):
    """Raised when a degenerate (measure-valued) weight reaches a training entry point."""


class DegenerateDataError(ValueError):
    """Raised for datasets that cannot support a fit (constant columns, empty classes)."""


class InfeasibleTargetError(ValueError):
    """Raised when a mean constraint lies outside (or on the boundary of) a convex hull."""


class SaturationError(ArithmeticError):
    """Raised when exponents exceed the representable range.

    ``log_value`` carries the log of the offending quantity when it could be
    computed in the log domain.
    """

    def __init__(self, message, log_value=float("nan"), count=0):
        super().__init__(message)
        self.log_value = log_value
        self.count = count


class ConvergenceError(ArithmeticError):
    """Raised when an iterative solver fails to reach its tolerance."""
