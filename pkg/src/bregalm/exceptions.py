"""Exception types raised by the solver stack."""


class BregalmError(Exception):
    """Base class for all package errors."""


class ConfigError(BregalmError, ValueError):
    """Invalid or missing solver/problem parameters.

    ``fields`` lists every offending field name so callers can report them
    all at once instead of failing on the first.
    """

    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = tuple(fields)


class EstimationError(BregalmError, ArithmeticError):
    """The value oracle returned a non-finite number."""


class NumericalError(BregalmError, ArithmeticError):
    """An inner numerical procedure failed to converge."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class StageError(BregalmError):
    """A restart stage failed; carries how many stages finished cleanly."""

    def __init__(self, message, stages_completed, partial=None):
        super().__init__(message)
        self.stages_completed = stages_completed
        self.partial = partial
