"""Exception types raised across the package."""


class ExpansiveError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(ExpansiveError, ValueError):
    pass


class DegenerateSystem(ExpansiveError, ValueError):
    pass


class CollisionError(ExpansiveError, ArithmeticError):
    """Two bodies closer than the collision tolerance.

    Attributes
    ----------
    pair : tuple of int or None
        Zero-based indices of the offending bodies.
    t : float or None
        Time at which the collision was detected, when known.
    """

    def __init__(self, message, pair=None, t=None):
        super().__init__(message)
        self.pair = pair
        self.t = t


class CollisionAtStart(CollisionError):
    pass


class ChainingAmbiguity(ExpansiveError, ValueError):
    pass


class RegimeMismatch(ExpansiveError, ValueError):
    pass


class NotConverged(ExpansiveError, RuntimeError):
    pass


class ConvergenceFailure(ExpansiveError, RuntimeError):
    pass


class IntegratorFailure(ExpansiveError, RuntimeError):
    pass


class UnstableGradient(ExpansiveError, RuntimeError):
    pass


class SpecError(ExpansiveError, ValueError):
    """Problem file rejected; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
