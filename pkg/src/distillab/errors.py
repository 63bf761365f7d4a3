"""Exception types shared across the package.

Every failure mode raised by library code is a subclass of DistillabError,
so callers (and the CLI) can separate artifact errors from programming bugs.
"""


class DistillabError(Exception):
    """Base class for all errors raised by this package."""


class BadShape(DistillabError):
    """A dimension argument is out of range for the requested construction."""


class DimMismatch(DistillabError):
    """Parameter, feature, or class dimensions disagree between arguments."""


class BadMagic(DistillabError):
    """An IDX file does not start with the expected magic number."""


class TruncatedFile(DistillabError):
    """An IDX file ends before the payload promised by its header."""


class EmptyPart(DistillabError):
    """A stratified split would leave some class empty on one side."""


class MissingClass(DistillabError):
    """Class-conditional computation requested but a class has no support."""


class DegenerateFit(DistillabError):
    """Least squares is underdetermined: fewer than 2 points or constant xs."""


class NonFiniteProbe(DistillabError):
    """A finite-difference probe evaluated to NaN or infinity."""


class NonFiniteGradient(DistillabError):
    """An outer gradient contains NaN or infinity; partial trace attached.

    The ``partial_trace`` attribute (when set) holds the objective values
    recorded before the failure.
    """

    def __init__(self, message, partial_trace=None):
        super().__init__(message)
        self.partial_trace = partial_trace


class InsufficientClassPoints(DistillabError):
    """A class has fewer points than the per-class budget requires."""


class InfeasibleTarget(DistillabError):
    """The requested error target lies at or below the fitted floor."""


class ZeroGap(DistillabError):
    """A pair of initial parameters coincides; contraction ratio undefined."""


class BadMatrix(DistillabError):
    """A distance matrix is asymmetric, has negative entries, or a nonzero
    diagonal."""


class ConfigError(DistillabError):
    """A run-config file failed validation before any compute started."""
