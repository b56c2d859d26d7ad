"""q-Pochhammer symbols and basic hypergeometric series.

Everything here is a pure function of its arguments. Infinite products and
series are truncated with explicit tail bounds; the ratio helper cancels
shared factors symbolically before evaluating, so removable singularities
come out finite instead of as ``0/0``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContinuationSingular, DivergentRatio, DomainError, Nonconvergent, TruncationFailure

__all__ = [
    "QBase",
    "PochFactor",
    "HyperSeriesSpec",
    "qpoch_finite",
    "qpoch_infinite",
    "qpoch_ratio",
    "zero_index",
    "phi_series",
    "phi21_regularized",
    "phi21_continued",
    "phi21_connection",
]


@dataclass(frozen=True)
class QBase:
    """Deformation parameter plus the numerical policy used with it.

    Parameters
    ----------
    q : float
        Deformation parameter, ``0 < q < 1``.
    eps : float
        Truncation tolerance for products and series.
    max_terms : int
        Hard cap on factors/terms before :class:`TruncationFailure`.
    cancel_tol : float
        Relative tolerance for treating two Pochhammer arguments (or an
        argument and ``base**-m``) as equal. Spectral parameters come from
        ``arccos`` and carry rounding, so this is looser than ``eps``.
    """

    q: float
    eps: float = 1e-16
    max_terms: int = 5000
    cancel_tol: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise DomainError(f"q must lie in (0, 1), got {self.q}", q=self.q)
        if self.eps <= 0 or self.cancel_tol <= 0:
            raise DomainError("tolerances must be positive", eps=self.eps, cancel_tol=self.cancel_tol)
        if self.max_terms < 1:
            raise DomainError("max_terms must be at least 1", max_terms=self.max_terms)

    def base(self, exponent: int = 2) -> float:
        return self.q**exponent


def qpoch_finite(a, base, n: int):
    """Finite q-Pochhammer symbol ``(a; base)_n``.

    >>> qpoch_finite(0.5, 0.5, 2)
    0.375
    """
    if n < 0:
        raise DomainError("n must be nonnegative", n=n)
    out = 1.0
    t = a
    for _ in range(n):
        out *= 1 - t
        t *= base
    return out


def qpoch_infinite(a, base, eps: float = 1e-16, max_terms: int = 5000):
    """Infinite product ``(a; base)_inf = prod_{m>=0} (1 - a base^m)``.

    Accepts a scalar or an array of ``a``. Multiplication stops once
    ``|a| |base|^m / (1 - |base|) < eps``, which bounds the relative effect
    of the omitted tail by ``eps`` (to first order).

    Raises
    ------
    TruncationFailure
        If the bound is not met within ``max_terms`` factors.
    """
    b = abs(base)
    if not b < 1:
        raise DomainError("|base| must be < 1", base=base)
    scalar = np.isscalar(a)
    t = np.array(a, dtype=complex if np.iscomplexobj(a) else float, copy=True)
    out = np.ones_like(t)
    scale = 1.0 / (1.0 - b)
    for _ in range(max_terms):
        if np.all(np.abs(t) * scale < eps):
            break
        out *= 1 - t
        t *= base
    else:
        raise TruncationFailure("infinite product did not converge", a=str(a), base=base, max_terms=max_terms)
    return out.item() if scalar else out


def zero_index(a, base, tol: float = 1e-12):
    """Return ``m >= 0`` with ``a * base**m == 1`` (within ``tol``), else ``None``.

    That ``m`` is the factor of ``(a; base)_inf`` that vanishes.
    """
    if a == 0:
        return None
    m = -math.log(abs(a)) / math.log(abs(base))
    m_int = int(round(m))
    if m_int < 0 or abs(m - m_int) > 1e-6:
        return None
    if abs(a * base**m_int - 1) <= tol:
        return m_int
    return None


@dataclass(frozen=True)
class PochFactor:
    """One factor ``(a q^{exponent*shift}; q^exponent)_inf`` of a ratio."""

    a: complex
    exponent: int = 2
    shift: int = 0

    def __post_init__(self):
        if self.exponent not in (1, 2):
            raise DomainError("Pochhammer base must be q or q^2", exponent=self.exponent)
        if not cmath.isfinite(complex(self.a)):
            raise DomainError("Pochhammer argument must be finite", a=str(self.a))

    def argument(self, qb: QBase):
        return self.a * qb.q ** (self.exponent * self.shift)


def _same(u, v, tol):
    return abs(u - v) <= tol * max(abs(u), abs(v), 1.0)


def qpoch_ratio(numer, denom, qb: QBase):
    """Evaluate ``prod numer / prod denom`` after cancelling equal factors.

    Factors whose arguments agree within ``qb.cancel_tol`` (relative) and
    share a base are removed pairwise before anything is evaluated. Zeros of
    the remaining factors are then counted exactly via :func:`zero_index`:
    more numerator zeros give exactly ``0``; more denominator zeros (or an
    equal, nonzero count, which is indeterminate) raise
    :class:`DivergentRatio`.
    """
    num = list(numer)
    den = list(denom)
    bases = {f.exponent for f in num + den}
    if len(bases) > 1:
        raise DomainError("all factors of a ratio must share one base", bases=sorted(bases))
    exponent = bases.pop() if bases else 2
    base = qb.q**exponent

    num_args = [f.argument(qb) for f in num]
    den_args = [f.argument(qb) for f in den]
    kept_den = []
    for d in den_args:
        for i, n in enumerate(num_args):
            if _same(n, d, qb.cancel_tol):
                del num_args[i]
                break
        else:
            kept_den.append(d)

    def split(args):
        zeros, finite = 0, []
        for x in args:
            if zero_index(x, base, qb.cancel_tol) is None:
                finite.append(x)
            else:
                zeros += 1
        return zeros, finite

    nz, num_finite = split(num_args)
    dz, den_finite = split(kept_den)
    if nz > dz:
        return 0.0
    value = 1.0 + 0j
    for x in num_finite:
        value *= qpoch_infinite(x, base, qb.eps, qb.max_terms)
    for x in den_finite:
        value /= qpoch_infinite(x, base, qb.eps, qb.max_terms)
    if dz > 0:
        marker = value / abs(value) if value != 0 else 0
        raise DivergentRatio(
            "uncancelled zero factor in denominator",
            sign=marker,
            numerator_zeros=nz,
            denominator_zeros=dz,
        )
    return value


@dataclass(frozen=True)
class HyperSeriesSpec:
    """Parameters of ``r phi s (upper; lower; base, arg)``."""

    upper: tuple
    lower: tuple
    base: complex
    arg: complex
    _terminates_at: int | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "upper", tuple(self.upper))
        object.__setattr__(self, "lower", tuple(self.lower))
        if not 0 < abs(self.base) < 1:
            raise DomainError("series base must satisfy 0 < |base| < 1", base=str(self.base))
        for c in self.lower:
            if zero_index(c, self.base) is not None:
                raise DomainError("lower parameter is a nonpositive power of the base", lower=str(c))
        stops = [m for m in (zero_index(u, self.base) for u in self.upper) if m is not None]
        object.__setattr__(self, "_terminates_at", min(stops) if stops else None)

    @property
    def terminating(self):
        return self._terminates_at is not None


def phi_series(spec: HyperSeriesSpec, eps: float = 1e-16, max_terms: int = 5000):
    """Sum ``r phi s`` by its term recurrence.

    Uses the convention with ``[(-1)^k base^{k(k-1)/2}]^{1+s-r}``, which is
    trivial for the ``2 phi 1`` case. A terminating series (an upper
    parameter equal to ``base^-m``) is summed exactly up to ``k = m``.

    Raises
    ------
    Nonconvergent
        For ``r = s + 1``, ``|arg| >= 1`` and no termination.
    """
    r, s = len(spec.upper), len(spec.lower)
    z, base = spec.arg, spec.base
    extra = 1 + s - r
    if spec.terminating:
        n_terms = spec._terminates_at + 1
    else:
        if extra < 0 or (extra == 0 and abs(z) >= 1):
            raise Nonconvergent("series argument outside the disk of convergence", arg=str(z))
        n_terms = None

    total = 0j
    t = 1 + 0j
    qk = 1.0
    k = 0
    while True:
        total += t
        if n_terms is not None and k + 1 >= n_terms:
            break
        ratio = z / (1 - base * qk)
        for u in spec.upper:
            ratio *= 1 - u * qk
        for c in spec.lower:
            ratio /= 1 - c * qk
        if extra:
            ratio *= (-qk) ** extra
        t *= ratio
        qk *= base
        k += 1
        if n_terms is None:
            rate = abs(z) if extra == 0 else 0.5
            if abs(t) <= eps * max(abs(total), 1e-300) * (1 - rate) and abs(base) ** k < 0.5:
                total += t
                break
        if k > max_terms:
            raise TruncationFailure("series did not converge", max_terms=max_terms, arg=str(z))
    return total


def _heine_order(a, b):
    return (a, b) if abs(a) >= abs(b) else (b, a)


def phi21_regularized(a, b, c, base, z, eps: float = 1e-16, max_terms: int = 5000):
    """Entire function ``(z; base)_inf * 2phi1(a, b; c; base, z)``.

    Heine's transformation gives, for ``|b| < 1``,

    ``(z)_inf 2phi1(a,b;c;z) = (b)_inf/(c)_inf sum_j (c/b)_j (z)_j / (base)_j  b^j (a z base^j)_inf``

    which converges for every ``z``. The parameter of smaller modulus is
    used as ``b``.
    """
    a, b = _heine_order(a, b)
    if not abs(b) < 1:
        raise ContinuationSingular("both numerator parameters have modulus >= 1", a=str(a), b=str(b))
    if b == 0:
        # 2phi1(a, 0; c; z): fall back to the power series inside the disk
        return qpoch_infinite(z, base, eps, max_terms) * phi_series(HyperSeriesSpec((a, b), (c,), base, z), eps, max_terms)
    cb = c / b
    coeffs = []
    t = 1 + 0j
    qj = 1.0
    peak = 1.0
    for j in range(max_terms):
        coeffs.append(t)
        peak = max(peak, abs(t))
        t = t * (1 - cb * qj) * (1 - z * qj) / (1 - base * qj) * b
        qj *= base
        if abs(z) * abs(qj) < 0.5 and abs(t) < eps * peak * (1 - abs(b)):
            break
    else:
        raise TruncationFailure("Heine series did not converge", max_terms=max_terms)
    coeffs = np.asarray(coeffs)
    shifts = a * z * base ** np.arange(len(coeffs))
    tails = qpoch_infinite(shifts.astype(complex), base, eps, max_terms)
    pref = qpoch_infinite(b, base, eps, max_terms) / qpoch_infinite(c, base, eps, max_terms)
    return complex(pref * np.sum(coeffs * tails))


def phi21_continued(a, b, c, base, z, eps: float = 1e-16, max_terms: int = 5000):
    """Analytic continuation of ``2phi1(a, b; c; base, z)`` to any ``z``.

    Evaluated as :func:`phi21_regularized` divided by ``(z; base)_inf``.

    Raises
    ------
    ContinuationSingular
        At the poles ``z = base^-m`` or when both ``|a|, |b| >= 1``.
    """
    if z == 0:
        return 1 + 0j
    if zero_index(c, base) is not None:
        raise ContinuationSingular("lower parameter is a pole of the series", c=str(c))
    m = zero_index(z, base)
    if m is not None:
        raise ContinuationSingular("argument is a pole of the continued function", z=str(z), m=m)
    if min(abs(a), abs(b)) >= 1:
        if abs(z) < 1:
            return phi_series(HyperSeriesSpec((a, b), (c,), base, z), eps, max_terms)
        return phi21_connection(a, b, c, base, z, eps, max_terms)
    return phi21_regularized(a, b, c, base, z, eps, max_terms) / qpoch_infinite(z, base, eps, max_terms)


def phi21_connection(a, b, c, base, z, eps: float = 1e-16, max_terms: int = 5000):
    """Continuation through two series in ``c base / (a b z)``.

    ``2phi1(a,b;c;z) = (b, c/a, az, base/(az))/(c, b/a, z, base/z) 2phi1(a, a base/c; a base/b; c base/(abz)) + (a <-> b)``

    Valid where the new argument has modulus < 1.

    Raises
    ------
    ContinuationSingular
        In the logarithmic case ``a/b in base^Z`` or when ``z`` or ``a z``
        lies on ``base^Z`` (zeros of the theta-type prefactors).
    """
    if zero_index(a / b, base) is not None or zero_index(b / a, base) is not None:
        raise ContinuationSingular("logarithmic case: a/b is an integer power of the base", a=str(a), b=str(b))
    for v, label in ((z, "z"), (base / z, "base/z")):
        if zero_index(v, base) is not None:
            raise ContinuationSingular(f"{label} hits a zero of the prefactor", z=str(z))
    w = c * base / (a * b * z)
    if abs(w) >= 1:
        raise Nonconvergent("connection-formula argument outside the unit disk", arg=str(w))

    def P(*args):
        out = 1 + 0j
        for x in args:
            out *= qpoch_infinite(x, base, eps, max_terms)
        return out

    def half(a, b):
        pref = P(b, c / a, a * z, base / (a * z)) / P(c, b / a, z, base / z)
        return pref * phi_series(HyperSeriesSpec((a, a * base / c), (a * base / b,), base, w), eps, max_terms)

    return half(a, b) + half(b, a)
