"""Exception and warning types shared by every module.

Each error carries a ``reason`` mapping so the command line can echo a
structured description next to the error name.
"""


class QSphereError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 2

    def __init__(self, message, **reason):
        super().__init__(message)
        self.reason = reason

    @property
    def name(self):
        return type(self).__name__


class TruncationFailure(QSphereError):
    """An infinite product or series did not meet its tail bound within ``max_terms``."""


class DivergentRatio(QSphereError):
    """A Pochhammer ratio has an uncancelled zero in the denominator.

    ``sign`` is the signed-infinity marker: ``+1`` or ``-1`` for the sign of
    the real part of the finite numerator, or ``0`` if that is zero too.
    """

    def __init__(self, message, sign=1, **reason):
        super().__init__(message, **reason)
        self.sign = sign


class Nonconvergent(QSphereError):
    """A power series was asked to sum outside its disk of convergence."""


class ContinuationSingular(QSphereError):
    """A continuation formula hit a zero denominator (e.g. the logarithmic case)."""


class DomainError(QSphereError):
    """An argument lies outside the domain of an operation."""


class GridMismatch(QSphereError):
    """A spherical field was built on a different spectral grid than requested."""


class MissingProvider(QSphereError):
    """An operation needs a provider (phases, product coefficients) that is not configured."""


class ResidualTooLarge(QSphereError):
    """A least-squares fit left a training residual above its ceiling."""

    exit_code = 1


class IllConditioned(QSphereError):
    """A linear system's condition number exceeded the configured limit."""

    exit_code = 3


class NegativePressure(UserWarning):
    """Negative components of an unconstrained density were clipped to zero."""
