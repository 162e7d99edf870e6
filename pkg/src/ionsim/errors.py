"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


class ConvergenceError(RuntimeError):
    """An iterative or truncated computation did not converge."""


class StiffnessError(ConvergenceError):
    """The adaptive integrator's step size underflowed."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class SingularSystemError(RuntimeError):
    """A steady-state linear system could not be solved reliably."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConfigError(ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
