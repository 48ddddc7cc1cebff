"""Exception types shared across the package."""


class InvalidParameter(ValueError):
    """An argument violates an operation's precondition."""


class InvalidInput(ValueError):
    """Input data (a file, a dataset) is unusable as given."""


class ParseError(InvalidInput):
    """A malformed line in a text input file."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class InvalidState(RuntimeError):
    """A state machine was driven out of order."""


class EpochNotRolled(InvalidState):
    """An estimator was asked for a sample past the end of its epoch."""


class NumericalFailure(ArithmeticError):
    """A numerical routine produced a result outside its guaranteed range."""


class InsufficientData(ValueError):
    """Too few usable points for a fit."""


class DivergenceError(ArithmeticError):
    """A non-finite iterate appeared during a run.

    ``trace`` holds the records collected before the failure so callers can
    flush a partial result.
    """

    def __init__(self, iteration, trace=None):
        super().__init__(
            f"non-finite iterate at iteration {iteration}; the step size is "
            "probably too large"
        )
        self.iteration = iteration
        self.trace = trace


class ConvergenceFailure(RuntimeError):
    """An iterative solver hit its iteration cap before the tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
