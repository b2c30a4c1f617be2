"""Exception types raised across the package."""


class KLGameError(Exception):
    """Base class for all library errors."""


class SupportError(KLGameError):
    """A distribution puts mass where its anchor/reference has none."""


class DimensionError(KLGameError):
    """Array shapes are inconsistent with the game dimensions."""


class DomainError(KLGameError):
    """An argument lies outside its admissible range."""


class CapacityError(KLGameError):
    """A brute-force routine was asked for more than it can enumerate."""


class ConsistencyError(KLGameError):
    """An internal numerical invariant was violated (indicates a bug)."""


class ConvergenceError(KLGameError):
    """An iterative solver hit its iteration budget without certifying."""

    def __init__(self, message, exploitability=float("nan"), iterations=0):
        super().__init__(message)
        self.exploitability = exploitability
        self.iterations = iterations
