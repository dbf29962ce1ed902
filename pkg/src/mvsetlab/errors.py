"""Exception hierarchy shared by all mvsetlab modules."""


class MVSetLabError(Exception):
    pass


class ParameterError(MVSetLabError, ValueError):
    """Invalid input parameters (shape params, poles, bounds, ...)."""


class AssemblyError(MVSetLabError):
    pass


class RestrictionError(MVSetLabError):
    pass


class ConvergenceError(MVSetLabError):
    """Raised when an iterative solver hits its iteration cap.

    The best iterate and, when available, the solve report ride along so
    callers can inspect how far the solve got.
    """

    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class NumericError(MVSetLabError, FloatingPointError):
    pass


class ExtractionError(MVSetLabError):
    pass


class PreconditionError(MVSetLabError):
    pass
