"""Exception hierarchy shared by all modules."""


class RechainError(Exception):
    """Base class for every error raised by the package."""


class InvalidInput(RechainError, ValueError):
    """Argument outside the documented domain (NaN coordinates, bad exponents...)."""


class EvaluationError(RechainError):
    """A user-supplied callable failed or returned NaN at a specific probe."""

    def __init__(self, message, probe=None):
        super().__init__(message)
        self.probe = probe


class PreconditionError(RechainError):
    """Operation called outside its preconditions (e.g. a state outside the small set)."""


class CapabilityError(RechainError):
    """A required optional capability (CDF, moment, exact integral) is missing."""


class CertificateViolation(RechainError):
    """A certificate was found to be false while being used.

    Carries the offending environment point, state and evaluation point.
    """

    def __init__(self, message, y=None, x=None, r=None):
        super().__init__(message)
        self.y = y
        self.x = x
        self.r = r


class HypothesisFailure(RechainError):
    """A theorem's standing hypothesis does not hold (e.g. a divergent rate sum)."""


class InvalidConfiguration(RechainError, ValueError):
    """Model or experiment parameters outside the admissible regime."""
