"""Exception types shared across the library."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularityError(ValueError):
    """A kernel was evaluated at (or across) one of its singular points."""


class ConvergenceError(RuntimeError):
    """An adaptive numerical procedure failed to reach the requested tolerance."""
