"""Exception hierarchy shared by the package."""


class SingSmoothError(Exception):
    """Base class for all package errors."""


class ParameterError(SingSmoothError, ValueError):
    """A penalty, step size or configuration value is out of range."""


class DimensionError(SingSmoothError, ValueError):
    """Array shapes or block layouts do not line up."""


class ModelError(SingSmoothError, ValueError):
    """The smoothing problem is malformed or infeasible."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class RankDeficiencyError(ModelError):
    """The constraint matrix lacks full row rank (non-PD pivot in its Gram factor)."""


class OracleError(SingSmoothError, RuntimeError):
    """A reference oracle could not produce an answer."""
