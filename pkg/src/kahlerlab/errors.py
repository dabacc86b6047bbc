"""Exception hierarchy shared by all kahlerlab modules."""


class KahlerLabError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgument(KahlerLabError, ValueError):
    pass


class DegenerateMetricError(KahlerLabError):
    """The Hessian of a symplectic potential is not positive definite."""


class NumericalOverflowError(KahlerLabError, ArithmeticError):
    pass


class ConvergenceFailure(KahlerLabError):
    """An iterative solver gave up.

    ``best`` holds the best iterate found and ``residual`` its residual norm,
    so callers can inspect partial progress.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class StepRejected(KahlerLabError):
    """A flow step failed; ``suggested_dt`` is the step to retry with."""

    def __init__(self, message, suggested_dt=None, state=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt
        self.state = state
