"""Exception types shared across the package."""


class FomViError(Exception):
    """Base class for all package errors."""


class StructuralError(FomViError, ValueError):
    """Array shapes or index ranges do not match the instance."""


class InfeasibleError(FomViError, ValueError):
    """A point lies outside the domain where a quantity is defined."""


class ConfigurationError(FomViError, ValueError):
    """Solver or generator parameters are invalid for the instance."""


class NumericalFailure(FomViError, RuntimeError):
    """A multiplier search failed to bracket or converge.

    ``state`` carries whatever bracket information the caller had when it
    gave up, so the failure can be reported rather than silently truncated.
    """

    def __init__(self, message, **state):
        super().__init__(message)
        self.state = state

    def __str__(self):
        base = super().__str__()
        if not self.state:
            return base
        details = ", ".join(f"{k}={v!r}" for k, v in self.state.items())
        return f"{base} ({details})"
