"""Exception hierarchy shared by all delaycert modules."""


class DelayCertError(Exception):
    """Base class for every error raised by delaycert."""


class DimensionError(DelayCertError, ValueError):
    """Matrix or vector sizes are inconsistent."""


class WellPosednessError(DelayCertError):
    """``I - Dpq @ Delta`` is (numerically) singular.

    Attributes
    ----------
    determinant : float
        Magnitude of ``det(I - Dpq @ Delta)`` at the offending point.
    block_index : int or None
        Index of the LFR block concerned, when known.
    """

    def __init__(self, message, determinant, block_index=None):
        super().__init__(message)
        self.determinant = float(determinant)
        self.block_index = block_index


class ModelFormatError(DelayCertError, ValueError):
    """A model file does not follow the documented JSON layout."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class HypothesisError(DelayCertError, ValueError):
    """A test was requested on a model that violates one of its hypotheses."""


class SizeGuardError(DelayCertError, ValueError):
    """A vertex enumeration would exceed the configured size limit."""


class MarginUndefinedError(DelayCertError):
    """The nominal problem is not certified, so a margin search is meaningless."""


class NumericalError(DelayCertError, ArithmeticError):
    """A numerical routine produced non-finite values."""
