"""Exception hierarchy shared across the package."""


class GvfError(Exception):
    """Base class for all package errors."""


class ValidationError(GvfError, ValueError):
    """Input failed a structural or shape check."""


class UnresolvedIdError(ValidationError):
    """A record references an id that cannot be resolved to a vertex."""

    def __init__(self, message, index):
        super().__init__(f"{message} (record {index})")
        self.index = index


class NumericalError(GvfError):
    """A numerical routine failed to produce a trustworthy result."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message}: relative residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


class TrainingDiverged(NumericalError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history
