class RankflowError(Exception):
    """Base class for errors raised by the service."""


class DomainValidationError(RankflowError, ValueError):
    """An input violates an operation's precondition or a type invariant."""


class TrajectoryFormatError(DomainValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GridTooCloseError(DomainValidationError):
    """A verification grid point sits too close to the front or a breakpoint image."""


class UnsupportedExponentError(DomainValidationError):
    """Pareto exponent in an excluded band (near 1 or 2) or b >= 2."""


class ConvergenceError(RankflowError, ArithmeticError):
    """A numerical procedure did not reach its tolerance."""


class QuadratureError(ConvergenceError):
    pass


class StepSizeError(ConvergenceError):
    pass
