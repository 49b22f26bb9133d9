"""Exception types shared across the package."""


class SngrcError(Exception):
    """Base class for all package errors."""


class IntegrationBlowup(SngrcError, ArithmeticError):
    """A simulated state left the finite/bounded region.

    ``step`` is the index ``i`` of the update ``x_i -> x_{i+1}`` that failed.
    """

    def __init__(self, step, message=None, partial=None):
        self.step = int(step)
        self.partial = partial
        super().__init__(message or f"integration blew up at step {self.step}")


class InsufficientHistory(SngrcError, IndexError):
    pass


class SingularFitError(SngrcError, ArithmeticError):
    pass


class RankDeficientInputGain(SngrcError, ArithmeticError):
    pass


class DimensionMismatch(SngrcError, ValueError):
    pass


class ClampRejected(SngrcError, ValueError):
    pass


class BadInput(SngrcError, ValueError):
    """Malformed or too-short input data (CLI exit code 3)."""
