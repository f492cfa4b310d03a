"""Exception and warning types shared across the library."""


class OdeventError(Exception):
    """Base class for all library errors."""


class InvalidSpecError(OdeventError, ValueError):
    """A network or solver specification is malformed."""


class ShapeError(OdeventError, ValueError):
    """An argument has the wrong dimension."""


class DomainError(OdeventError, ValueError):
    """A time or parameter value lies outside the valid domain."""


class DivergenceError(OdeventError, ArithmeticError):
    """The integrated state became nonfinite."""


class StepLimitError(OdeventError, RuntimeError):
    """The solver exhausted its step budget.

    Carries the partial solution computed so far in ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class BracketError(OdeventError, ValueError):
    """A root-finding bracket does not contain a sign change."""


class RootRefineError(OdeventError, RuntimeError):
    """Root refinement failed to converge within its budget."""


class ImmediateEventError(OdeventError, RuntimeError):
    """The event function is zero at the initial instant."""


class GrazingEventError(OdeventError, ArithmeticError):
    """Tangential event contact: the event-time gradient is undefined."""


class RunawayIntensityError(OdeventError, RuntimeError):
    """Point-process sampling exceeded its event-count safety cap."""


class TrainingDivergedError(OdeventError, RuntimeError):
    """A nonfinite loss or gradient aborted training.

    Carries a diagnostic ``snapshot`` dict (iteration, loss, parameters).
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class BackwardMismatchWarning(UserWarning):
    """Backward re-solve of the state drifted from the stored initial state."""
