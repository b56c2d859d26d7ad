"""Spectral parameters and the spherical kernels ``K_j^{sigma,tau}(p0; x)``.

The kernels are products of an explicit little q-Jacobi expression
(:func:`s_function`), a sign fixed by the kernel table, and a unit-modulus
phase supplied by a :class:`PhaseProvider`. Kernels with ``sigma = -`` are
obtained from the ``sigma = +`` ones through the symmetry
``K^{s,t}(p0; x) = s t K^{-s,-t}(p0; -x)``.
"""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ContinuationSingular, DivergentRatio, DomainError, IllConditioned
from .lattice import LatticePoint, LatticeWindow, enumerate_points, mu
from .qseries import PochFactor, QBase, phi21_regularized, qpoch_infinite, qpoch_ratio, zero_index
from .reports import FitReport

__all__ = [
    "Principal",
    "Discrete",
    "Complementary",
    "SignPair",
    "SIGN_PAIRS",
    "CompanionConstants",
    "PhaseProvider",
    "lambda_of",
    "canonical_lambda",
    "s_function",
    "kernel",
    "kernel_at",
    "kernel_phase",
    "fit_phases",
]


# ---------------------------------------------------------------------------
# spectrum points


@dataclass(frozen=True)
class Principal:
    """Principal series point ``x`` in ``[0, 1]`` with multiplicity label ``j``."""

    x: float
    j: int = 1

    def __post_init__(self):
        if not 0.0 <= self.x <= 1.0:
            raise DomainError("principal x must lie in [0, 1]", x=self.x)
        if self.j not in (1, 2):
            raise DomainError("j must be 1 or 2", j=self.j)

    def value(self, q: float) -> float:
        return self.x


@dataclass(frozen=True)
class Discrete:
    """Discrete series point ``x = mu(q^{2n+1})``, ``n >= 1``."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("discrete series index starts at n = 1", n=self.n)

    def value(self, q: float) -> float:
        return mu(q ** (2 * self.n + 1))


@dataclass(frozen=True)
class Complementary:
    """Complementary series point ``1 < x < mu(q)``."""

    x: float
    j: int = 1

    def value(self, q: float) -> float:
        if not 1.0 < self.x < mu(q):
            raise DomainError("complementary x must lie in (1, mu(q))", x=self.x)
        return self.x


def lambda_of(point, q: float) -> complex:
    """Spectral parameter ``lambda`` with ``mu(lambda) = x``.

    Principal points use ``exp(i arccos x)`` on the upper half circle,
    discrete points the representative ``q^{2n+1}`` inside the disk, and
    complementary points ``x - sqrt(x^2 - 1)`` in ``(q, 1)``.
    """
    if isinstance(point, Principal):
        return cmath.exp(1j * math.acos(point.x))
    if isinstance(point, Discrete):
        return complex(q ** (2 * point.n + 1))
    if isinstance(point, Complementary):
        x = point.value(q)
        return complex(x - math.sqrt(x * x - 1))
    raise DomainError(f"unknown spectrum point {point!r}")


def canonical_lambda(x: float) -> complex:
    """Upper-half-circle ``lambda`` for any ``x`` in ``[-1, 1]``."""
    if not -1.0 <= x <= 1.0:
        raise DomainError("x must lie in [-1, 1]", x=x)
    return cmath.exp(1j * math.acos(x))


@dataclass(frozen=True)
class SignPair:
    sigma: int
    tau: int

    def __post_init__(self):
        if self.sigma not in (1, -1) or self.tau not in (1, -1):
            raise DomainError("signs must be +1 or -1")

    @classmethod
    def parse(cls, text: str) -> "SignPair":
        if len(text) != 2 or any(c not in "+-" for c in text):
            raise DomainError(f"sign pair must look like '+-', got {text!r}", text=text)
        return cls(1 if text[0] == "+" else -1, 1 if text[1] == "+" else -1)

    def __str__(self):
        return ("+" if self.sigma > 0 else "-") + ("+" if self.tau > 0 else "-")

    def flipped(self) -> "SignPair":
        return SignPair(-self.sigma, -self.tau)


PP, PM, MP, MM = SignPair(1, 1), SignPair(1, -1), SignPair(-1, 1), SignPair(-1, -1)
SIGN_PAIRS = (PP, MP, PM, MM)


# ---------------------------------------------------------------------------
# companion constants and phases


def _kappa_default(p: LatticePoint, q: float) -> float:
    return p.sign * q ** (2 * p.k)


def _rho_default(p: LatticePoint, q: float) -> float:
    return q ** (2 * p.k)


@dataclass(frozen=True)
class CompanionConstants:
    """``kappa(p)`` and the per-point prefactor ``rho(p) = |p|^2 nu(p)^2 c_q^2``.

    The defaults are ``kappa(p) = sgn(p) p^2`` and ``rho(p) = p^2``.
    ``rho`` only rescales kernel rows, so magnitude-ratio checks and refitted
    product coefficients do not depend on it.
    """

    kappa: Callable = _kappa_default
    rho: Callable = _rho_default
    name: str = "default"

    @classmethod
    def from_nu(cls, nu: Callable, c_q: float, kappa: Callable = _kappa_default):
        """Build from ``nu(p)`` and ``c_q`` as separate factors."""

        def rho(p, q):
            return q ** (2 * p.k) * nu(p, q) ** 2 * c_q**2

        return cls(kappa=kappa, rho=rho, name="companion")

    def rescaled(self, factors: dict, name: str = "fitted") -> "CompanionConstants":
        """Multiply ``rho`` pointwise by ``factors[p]`` (missing points keep factor 1)."""
        base = self.rho
        frozen = dict(factors)

        def rho(p, q):
            return base(p, q) * frozen.get(p, 1.0)

        return CompanionConstants(kappa=self.kappa, rho=rho, name=name)


_PINNED = {(1, PP, -1), (2, PP, -1)}
FREE_BRANCHES = tuple(
    (j, s, sg) for j in (1, 2) for s in (PP, PM) for sg in (1, -1) if (j, s, sg) not in _PINNED
)


@dataclass(frozen=True)
class PhaseProvider:
    """Unit-modulus phase per branch ``(j, signs, sgn p0)`` as a function of ``x``.

    Angles are stored at sample points and linearly interpolated in ``x``
    (clamped outside the sampled range). Branches without samples have
    angle 0. The ``K^{+,+}``, ``p0 < 0`` branches are pinned to 1.
    """

    branches: tuple = ()
    name: str = "unit"

    def _table(self):
        return {(b[0], b[1], b[2]): (b[3], b[4]) for b in self.branches}

    def angle(self, j: int, signs: SignPair, sign: int, x: float) -> float:
        if (j, signs, sign) in _PINNED:
            return 0.0
        for bj, bs, bsg, xs, th in self.branches:
            if bj == j and bs == signs and bsg == sign:
                return float(np.interp(x, xs, th))
        return 0.0

    def phase(self, j: int, signs: SignPair, sign: int, lam: complex) -> complex:
        x = mu(lam).real
        return cmath.exp(1j * self.angle(j, signs, sign, x))

    def with_branch(self, j, signs, sign, xs, thetas, name=None) -> "PhaseProvider":
        if (j, signs, sign) in _PINNED:
            raise DomainError("branch is pinned to the constant 1", branch=f"{j}{signs}{sign}")
        kept = tuple(b for b in self.branches if (b[0], b[1], b[2]) != (j, signs, sign))
        order = np.argsort(xs)
        new = (j, signs, sign, tuple(float(v) for v in np.asarray(xs)[order]), tuple(float(v) for v in np.asarray(thetas)[order]))
        return PhaseProvider(kept + (new,), name or self.name)

    def to_json(self):
        return {
            "branches": [
                {
                    "j": j,
                    "sigma": "+" if s.sigma > 0 else "-",
                    "tau": "+" if s.tau > 0 else "-",
                    "p0_sign": sg,
                    "angles": [{"x": x, "theta": t} for x, t in zip(xs, th)],
                }
                for j, s, sg, xs, th in sorted(self.branches, key=lambda b: (b[0], str(b[1]), b[2]))
            ]
        }

    @classmethod
    def from_json(cls, obj, name="file"):
        try:
            out = cls((), name)
            for b in obj["branches"]:
                signs = SignPair.parse(b["sigma"] + b["tau"])
                if signs not in (PP, PM):
                    raise DomainError("phase branches are stored for (+,+) and (+,-) only", signs=str(signs))
                pts = sorted((float(a["x"]), float(a["theta"])) for a in b["angles"])
                if not pts:
                    raise DomainError("phase branch without angles")
                out = out.with_branch(int(b["j"]), signs, int(b["p0_sign"]), [p[0] for p in pts], [p[1] for p in pts], name)
            return out
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed phase provider: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh), name=str(path))


# ---------------------------------------------------------------------------
# the explicit S-function


def s_function(variant: str, lam: complex, p0: LatticePoint, consts: CompanionConstants, qb: QBase) -> complex:
    """Little q-Jacobi expression behind every kernel.

    ``variant="upper"`` and ``"lower"`` select the upper or lower choice of
    signs in

    ``rho(p0) sqrt((+-kappa, -kappa; q^2)) (-+q^2; q^2)
    (q^2, -q^2/kappa, lambda q^2, 1/lambda, -q/lambda; q^2) / (s/lambda, s lambda q^2, +-q/lambda; q^2)
    2phi1(-q/lambda, -lambda q; -q^2; q^2, -q^2/kappa)``

    with ``s = sgn(p0)``. The factor ``(-q^2/kappa; q^2)`` and the series
    are evaluated together as the entire function
    :func:`~qsphere.qseries.phi21_regularized`; shared Pochhammer factors
    cancel before evaluation.

    Raises
    ------
    DivergentRatio
        If a zero of the denominator survives cancellation.
    """
    if lam == 0:
        raise DomainError("lambda must be nonzero")
    if variant not in ("upper", "lower"):
        raise DomainError("variant must be 'upper' or 'lower'", variant=variant)
    return _s_cached(variant, complex(lam), p0, consts, qb)


@lru_cache(maxsize=200_000)
def _s_cached(variant, lam, p0, consts, qb):
    prefactor, ratio = _s_prefactor(variant, lam, p0, consts, qb)
    if prefactor == 0:
        return 0j
    q = qb.q
    kap = consts.kappa(p0, q)
    try:
        reg = phi21_regularized(-q / lam, -lam * q, -q * q, q * q, -q * q / kap, qb.eps, qb.max_terms)
    except ContinuationSingular as exc:
        raise ContinuationSingular(str(exc), lam=str(lam), p0=p0.label(), **exc.reason) from None
    return complex(prefactor * reg)


@lru_cache(maxsize=200_000)
def _s_prefactor(variant, lam, p0, consts, qb):
    """Everything in front of the series, and the lambda-dependent ratio alone."""
    q = qb.q
    Q = q * q
    up = variant == "upper"
    sg = p0.sign
    kap = consts.kappa(p0, q)
    pm = 1 if up else -1

    root_args = (pm * kap, -kap)
    if any(zero_index(a, Q, qb.cancel_tol) is not None for a in root_args):
        return 0j, 0j
    root = cmath.sqrt(qpoch_infinite(root_args[0], Q, qb.eps, qb.max_terms) * qpoch_infinite(root_args[1], Q, qb.eps, qb.max_terms))
    fac = qpoch_infinite(-pm * Q, Q, qb.eps, qb.max_terms)
    numer = [PochFactor(Q), PochFactor(lam * Q), PochFactor(1 / lam), PochFactor(-q / lam)]
    denom = [PochFactor(sg / lam), PochFactor(sg * lam * Q), PochFactor(pm * q / lam)]
    try:
        ratio = qpoch_ratio(numer, denom, qb)
    except DivergentRatio as exc:
        raise DivergentRatio(
            f"S-function pole at lambda={lam:.6g}, p0={p0.label()} ({variant})",
            sign=exc.sign,
            lam=str(lam),
            p0=p0.label(),
            variant=variant,
        ) from None
    return complex(consts.rho(p0, q) * root * fac * ratio), complex(ratio)


# ---------------------------------------------------------------------------
# kernels

# (j, signs, sgn p0) -> (variant, overall sign); the (+,+) rows use the lower
# formula, the (+,-) rows the upper one, both at +lambda.
_TABLE = {
    (1, PP, -1): ("lower", 1),
    (1, PP, 1): ("lower", 1),
    (2, PP, -1): ("lower", 1),
    (2, PP, 1): ("lower", -1),
    (1, PM, -1): ("upper", -1),
    (1, PM, 1): ("upper", 1),
    (2, PM, -1): ("upper", -1),
    (2, PM, 1): ("upper", -1),
}


def _plus_kernel(j, signs, p0, lam, phases, consts, qb):
    variant, sign = _TABLE[(j, signs, p0.sign)]
    s = s_function(variant, lam, p0, consts, qb)
    if s == 0:
        return 0j
    return sign * s * phases.phase(j, signs, p0.sign, lam)


def kernel_at(j: int, signs: SignPair, p0: LatticePoint, lam: complex, phases: PhaseProvider, consts: CompanionConstants, qb: QBase) -> complex:
    """Kernel at an explicit spectral parameter ``lambda`` (any representative).

    ``sigma = -`` kernels use the symmetry with ``-x`` reached by
    ``lambda -> -lambda``.
    """
    if signs.sigma > 0:
        return _plus_kernel(j, signs, p0, lam, phases, consts, qb)
    st = signs.sigma * signs.tau
    return st * _plus_kernel(j, signs.flipped(), p0, -lam, phases, consts, qb)


def kernel_phase(j: int, signs: SignPair, p0: LatticePoint, lam: complex, phases: PhaseProvider, consts: CompanionConstants, qb: QBase) -> complex:
    """The ``x``-dependent unit factor of ``K_j^{sigma,tau}(p0; x)``.

    It depends on ``p0`` only through ``sgn(p0)``. For ``|lambda| = 1`` the
    series factor is real (its upper parameters are complex conjugates), so
    ``K / u`` is a fixed per-point constant times a real function of ``x``.
    Returns 1 where the kernel vanishes.
    """
    if signs.sigma < 0:
        return signs.sigma * signs.tau * kernel_phase(j, signs.flipped(), p0, -lam, phases, consts, qb)
    variant, sign = _TABLE[(j, signs, p0.sign)]
    pre, ratio = _s_prefactor(variant, complex(lam), p0, consts, qb)
    if pre == 0 or ratio == 0:
        return 1 + 0j
    return sign * ratio / abs(ratio) * phases.phase(j, signs, p0.sign, lam)


def kernel(
    j: int,
    signs: SignPair,
    p0: LatticePoint,
    point,
    phases: PhaseProvider,
    consts: CompanionConstants,
    qb: QBase,
    structural: bool = True,
) -> complex:
    """``K_j^{sigma,tau}(p0; x)`` at a spectrum point.

    At discrete points both ``j`` share the ``j = 1`` value. With
    ``structural=True`` (default) every sign pair other than ``(+,+)``
    returns exactly 0 there, because the subgroup-invariant space of a
    discrete series representation is one dimensional; ``structural=False``
    evaluates the closed-form expression instead (which may raise
    :class:`DivergentRatio`).
    """
    lam = lambda_of(point, qb.q)
    if isinstance(point, Discrete):
        if signs != PP and structural:
            return 0j
        j = 1
    return kernel_at(j, signs, p0, lam, phases, consts, qb)


# ---------------------------------------------------------------------------
# phase fitting


def _branch_points(window, signs, sign):
    return enumerate_points(window, sign_filter=sign, odd=(signs == PM))


def _bare_row(j, signs, sign, x, window, consts, qb):
    lam = canonical_lambda(x)
    pts = _branch_points(window, signs, sign)
    unit = PhaseProvider()
    return np.array([_plus_kernel(j, signs, p, lam, unit, consts, qb) for p in pts])


def fit_phases(grid, window: LatticeWindow, consts: CompanionConstants, qb: QBase, reference: PhaseProvider | None = None, observed=None):
    """Estimate the phase ratios for every branch not pinned to 1.

    Parameters
    ----------
    grid : sequence of float or Principal
        At least 8 principal ``x`` values.
    reference : PhaseProvider, optional
        Fixes the gauge: ``j = 1`` branches and the ``(2, +-, p0<0)``
        branch keep their reference angles when no observations are given.
    observed : callable, optional
        ``observed(j, signs, sign, x, points) -> array`` of kernel values to
        align to. With observations each branch angle is the least-squares
        phase ``arg <row, observed>`` at each ``x``. Without them, the
        remaining ``j = 2`` angles are solved so that kernel rows of
        opposite ``sgn p0`` are orthogonal after summing over ``j``.

    Returns
    -------
    PhaseProvider, FitReport

    Raises
    ------
    IllConditioned
        If a branch row vanishes (relative to its median size) at a grid
        point, leaving the angle undetermined.
    """
    xs = sorted(float(getattr(g, "x", g)) for g in grid)
    if len(xs) < 8:
        raise DomainError("phase fitting needs at least 8 principal points", n=len(xs))
    reference = reference or PhaseProvider()
    angles = {b: np.zeros(len(xs)) for b in FREE_BRANCHES}
    residuals = {}
    conds = []

    rows = {b: [_bare_row(*b, x, window, consts, qb) for x in xs] for b in FREE_BRANCHES + tuple(_PINNED)}

    def check(b):
        norms = np.array([np.linalg.norm(r) for r in rows[b]])
        med = np.median(norms) if norms.size else 0.0
        if med == 0:
            return 1.0
        c = med / max(norms.min(), 1e-300)
        conds.append(c)
        if c > 1e10:
            raise IllConditioned("branch row vanishes at a grid point; angle undetermined", branch=f"{b[0]}{b[1]}{b[2]}", condition=c)
        return c

    if observed is not None:
        for b in FREE_BRANCHES:
            check(b)
            res = []
            for i, x in enumerate(xs):
                v = rows[b][i]
                t = np.asarray(observed(*b, x, _branch_points(window, b[1], b[2])), dtype=complex)
                ip = np.vdot(v, t)
                angles[b][i] = cmath.phase(ip) if abs(ip) > 0 else 0.0
                fit = v * cmath.exp(1j * angles[b][i])
                res.append(np.linalg.norm(t - fit) / max(np.linalg.norm(t), 1e-300))
            residuals[f"{b[0]}{b[1]}{b[2]:+d}"] = float(max(res))
    else:
        for b in FREE_BRANCHES:
            angles[b] = np.array([reference.angle(b[0], b[1], b[2], x) for x in xs])
        for signs in (PP, PM):
            check((1, signs, 1))
            res = []
            for i, x in enumerate(xs):
                # sum_j K_j(p>0) conj K_j(p'<0) = 0 for all p, p'
                def ang(j, sg):
                    return angles[(j, signs, sg)][i] if (j, signs, sg) in angles else 0.0

                c1 = np.outer(rows[(1, signs, 1)][i], rows[(1, signs, -1)][i].conj()) * cmath.exp(1j * (ang(1, 1) - ang(1, -1)))
                c2 = np.outer(rows[(2, signs, 1)][i], rows[(2, signs, -1)][i].conj()) * cmath.exp(-1j * ang(2, -1))
                # choose angle a of (2, signs, +) minimizing ||c1 + e^{ia} c2||
                ip = np.vdot(c2.ravel(), -c1.ravel())
                a = cmath.phase(ip) if abs(ip) > 0 else 0.0
                angles[(2, signs, 1)][i] = a
                scale = max(np.linalg.norm(c1), np.linalg.norm(c2), 1e-300)
                res.append(np.linalg.norm(c1 + cmath.exp(1j * a) * c2) / scale)
            residuals[f"orthogonality{signs}"] = float(max(res))

    provider = PhaseProvider((), "fitted")
    for b in FREE_BRANCHES:
        provider = provider.with_branch(*b, xs, np.angle(np.exp(1j * angles[b])), name="fitted")

    # magnitude form of the symmetry relation through the other representative
    sym = 0.0
    for b in FREE_BRANCHES:
        for x in xs[:: max(1, len(xs) // 8)]:
            v = rows[b][xs.index(x)]
            w = np.array([_plus_kernel(b[0], b[1], p, canonical_lambda(x).conjugate(), PhaseProvider(), consts, qb) for p in _branch_points(window, b[1], b[2])])
            scale = max(np.abs(v).max(initial=0), 1e-300)
            sym = max(sym, float(np.abs(np.abs(v) - np.abs(w)).max(initial=0) / scale))
    residuals["symmetry_magnitude"] = sym
    report = FitReport("phases", residuals=residuals, condition=float(max(conds)) if conds else None, fitted={"n_grid": len(xs)})
    return provider, report
