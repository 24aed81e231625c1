"""Exception hierarchy shared by all modules.

Each exception carries the process exit code the command-line front end
uses when the error escapes a subcommand: 2 for invalid input, 3 for
truncation caps that are too small, 4 for statistical gates that fail.
"""


class ExcursionError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(ExcursionError, ValueError):
    """An increment law or configuration violates a standing assumption."""

    exit_code = 2


class NoRoot(ValidationError):
    """The moment generating function has no positive root of phi(t) = 1."""


class SingularCovariance(ExcursionError, ArithmeticError):
    """A Gaussian covariance matrix has non-positive determinant."""

    exit_code = 2


class ZeroConditioningEvent(ExcursionError, ValueError):
    """Conditioning on an event of probability zero."""

    exit_code = 2


class QuadratureError(ExcursionError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class CapsTooSmall(ExcursionError):
    """Dynamic-programming caps left more than the allowed mass unresolved."""

    exit_code = 3


class TruncationTooCoarse(ExcursionError):
    """A truncated series has a tail bound above the allowed fraction."""

    exit_code = 3


class HorizonTooShort(ExcursionError):
    """A finite simulation horizon leaves too large a bias bracket."""

    exit_code = 3


class WindowTooNarrow(ExcursionError):
    """The importance-sampling horizon window misses too much mass."""

    exit_code = 3


class RejectionTooSlow(ExcursionError):
    """Rejection sampling acceptance rate is below the usable floor."""

    exit_code = 3


class GateFailure(ExcursionError):
    """At least one statistical verdict failed."""

    exit_code = 4
