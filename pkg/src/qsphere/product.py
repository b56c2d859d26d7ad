"""Product formulae for the spherical kernels and their coefficients.

For each variant a product of two kernels at the same spectral point is
expanded over the lattice,

``K_j^{L}(p1; x) K_j^{R}(p2; x) = sum_{p0} c_{p0} K_j^{T}(p0; x) p0^2``,

with sign pairs ``(L, R, T)`` fixed by the variant. A :class:`CoefficientSet`
stores the coefficients of the matching point-functional identity,
``A_{p0} = p1^2 p2^2 c_{p0}``, because applying the weighted point
functionals to ``Delta(K_x) = K_x (x) K_x`` produces the factor
``p1^2 p2^2`` on the left.

Coefficients are nonzero only on one sign of the expansion argument:
``sgn(p0) = sgn(p1 p2)`` for all four variants, with ``p0``, ``p1``, ``p2``
the arguments of the kernels as computed by :mod:`qsphere.kernels`.
Variants whose third kernel is off-diagonal are sometimes written with the
opposite sign; ``support_sign=-1`` builds that rule for comparison.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IllConditioned, MissingProvider, ResidualTooLarge
from .kernels import MM, MP, PM, PP, Discrete, Principal, SignPair, kernel, kernel_at, kernel_phase, lambda_of
from .lattice import LatticePoint, LatticeWindow, enumerate_points
from .reports import FitReport

__all__ = [
    "ProductVariant",
    "VARIANTS",
    "AProvider",
    "CoefficientSet",
    "support",
    "coefficients_analytic",
    "coefficients_fitted",
    "verify",
    "normalization_check",
]


@dataclass(frozen=True)
class ProductVariant:
    """Sign pairs of the two factors and of the expansion kernel.

    ``support_sign`` is +1 when ``sgn(p0) = sgn(p1 p2)`` on the support and
    -1 when ``sgn(p0) = -sgn(p1 p2)``.
    """

    tag: str
    left: SignPair
    right: SignPair
    target: SignPair
    support_sign: int

    @staticmethod
    def _odd(signs: SignPair) -> bool:
        return signs.sigma != signs.tau

    @property
    def odd_legs(self):
        """Whether each factor lives on the odd part (needs ``|p| < 1``)."""
        return self._odd(self.left), self._odd(self.right)

    @property
    def odd_target(self) -> bool:
        return self._odd(self.target)

    def __str__(self):
        return self.tag

    @classmethod
    def parse(cls, tag) -> "ProductVariant":
        if isinstance(tag, ProductVariant):
            return tag
        try:
            return VARIANTS[str(tag).upper()]
        except KeyError:
            raise DomainError(f"unknown product variant {tag!r}; expected one of I, II, III, IV", variant=str(tag)) from None


VARIANTS = {
    "I": ProductVariant("I", PP, PP, PP, 1),
    "II": ProductVariant("II", PM, MP, MM, 1),
    "III": ProductVariant("III", PP, MP, MP, 1),
    "IV": ProductVariant("IV", MP, MM, MP, 1),
}


def _neg(p: LatticePoint):
    """``-p`` as a lattice point, or None when it is not on the lattice."""
    if p.sign > 0 and p.k < 1:
        return None
    return LatticePoint(-p.sign, p.k)


def legs_vanish(variant: ProductVariant, p1: LatticePoint, p2: LatticePoint) -> bool:
    """True when an odd factor sits at ``|p| >= 1``, making both sides zero."""
    odd1, odd2 = variant.odd_legs
    return (odd1 and not p1.inside_unit) or (odd2 and not p2.inside_unit)


def candidates(variant: ProductVariant, window: LatticeWindow):
    """Every ``p0`` the expansion kernel is defined on inside the window."""
    return enumerate_points(window, odd=variant.odd_target)


def support(variant, p1: LatticePoint, p2: LatticePoint, window: LatticeWindow):
    """Points of :func:`candidates` allowed by the sign rule."""
    variant = ProductVariant.parse(variant)
    want = variant.support_sign * p1.sign * p2.sign
    return [p for p in candidates(variant, window) if p.sign == want]


# ---------------------------------------------------------------------------
# coefficient containers and providers


@dataclass
class AProvider:
    """Tabulated ``a_{p0}(p1, p2)``; entries not listed are zero.

    The table must respect ``a_{p0}(p1, p2) = 0`` whenever ``sgn(p0 p1 p2) = -1``.
    """

    table: dict = field(default_factory=dict)
    name: str = "file"

    def __post_init__(self):
        for (p0, p1, p2), v in self.table.items():
            if v != 0 and p0.sign * p1.sign * p2.sign < 0:
                raise DomainError(
                    "a-provider violates the sign rule a_z(x, y) = 0 for sgn(xyz) = -1",
                    p0=p0.label(),
                    p1=p1.label(),
                    p2=p2.label(),
                )

    def a(self, p0, p1, p2) -> float:
        if p0 is None or p1 is None or p2 is None:
            return 0.0
        return float(self.table.get((p0, p1, p2), 0.0))

    @classmethod
    def from_json(cls, obj, name="file"):
        """``{"entries": [{"p0": {...}, "p1": {...}, "p2": {...}, "a": num}]}``."""
        try:
            table = {}
            for e in obj["entries"]:
                key = tuple(LatticePoint.from_json(e[k]) for k in ("p0", "p1", "p2"))
                table[key] = float(e["a"])
            return cls(table, name)
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed a-provider: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh), name=str(path))


@dataclass
class CoefficientSet:
    """Coefficients ``A_{p0}`` of one variant for one pair ``(p1, p2)``."""

    variant: ProductVariant
    p1: LatticePoint
    p2: LatticePoint
    values: dict
    provenance: str
    report: FitReport | None = None

    def formula_coefficients(self, q: float) -> dict:
        """Coefficients ``c_{p0}`` of the kernel product expansion."""
        scale = self.p1.weight(q) * self.p2.weight(q)
        return {p: v / scale for p, v in self.values.items()}

    def off_support_ratio(self, window: LatticeWindow) -> float:
        """Largest ``|A|`` outside the sign-rule support over the largest ``|A|``."""
        allowed = set(support(self.variant, self.p1, self.p2, window))
        top = max((abs(v) for v in self.values.values()), default=0.0)
        off = max((abs(v) for p, v in self.values.items() if p not in allowed), default=0.0)
        return off / top if top > 0 else 0.0

    def to_json(self):
        return {
            "variant": self.variant.tag,
            "p1": self.p1.to_json(),
            "p2": self.p2.to_json(),
            "values": [{"p0": p.to_json(), "c": float(v)} for p, v in sorted(self.values.items(), key=lambda kv: (kv[0].k, -kv[0].sign))],
            "provenance": self.provenance,
            "report": self.report.to_json() if self.report is not None else None,
        }

    @classmethod
    def from_json(cls, obj):
        try:
            values = {LatticePoint.from_json(r["p0"]): float(r["c"]) for r in obj["values"]}
            rep = obj.get("report")
            report = FitReport(rep["kind"], rep.get("residuals", {}), rep.get("condition"), rep.get("fitted", {}), rep.get("notes", [])) if rep else None
            return cls(
                ProductVariant.parse(obj["variant"]),
                LatticePoint.from_json(obj["p1"]),
                LatticePoint.from_json(obj["p2"]),
                values,
                str(obj.get("provenance", "fitted")),
                report,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed coefficient set: {exc}") from exc


def coefficients_analytic(variant, p1: LatticePoint, p2: LatticePoint, window: LatticeWindow, q: float, provider: AProvider | None) -> CoefficientSet:
    """Coefficients from a tabulated ``a``.

    ``A p0^2 = a_{p0}(p1,p2)^2``, ``B p0^2 = a_{p0}(p1,p2) a_{p0}(-p1,-p2)``,
    ``C p0^2 = a_{p0}(p1,-p2) a_{-p0}(p1,p2)``,
    ``D p0^2 = a_{p0}(-p1,p2) a_{-p0}(p1,p2)``.

    For III and IV the identity index ``p0`` is stored under the kernel
    argument ``-p0``, which puts the support on ``sgn = sgn(p1 p2)``.

    Raises
    ------
    MissingProvider
        If no provider is configured.
    """
    variant = ProductVariant.parse(variant)
    if provider is None:
        raise MissingProvider("analytic coefficients need an a-provider (--a-provider FILE)")
    a = provider.a
    values = {}
    zero = legs_vanish(variant, p1, p2)
    for pk in candidates(variant, window):
        if zero:
            values[pk] = 0.0
            continue
        # the identities for an off-diagonal third kernel are indexed by -p0
        p0 = _neg(pk) if variant.odd_target else pk
        if variant.tag == "I":
            prod = a(p0, p1, p2) ** 2
        elif variant.tag == "II":
            prod = a(p0, p1, p2) * a(p0, _neg(p1), _neg(p2))
        elif variant.tag == "III":
            prod = a(p0, p1, _neg(p2)) * a(_neg(p0), p1, p2)
        else:
            prod = a(p0, _neg(p1), p2) * a(_neg(p0), p1, p2)
        values[pk] = prod / p0.weight(q)
    return CoefficientSet(variant, p1, p2, values, "analytic")


# ---------------------------------------------------------------------------
# numerical side of the formulae


def _as_point(x):
    if isinstance(x, (Principal, Discrete)):
        return x
    return Principal(float(x))


def _sides(variant, p1, p2, points, p0s, ctx, j_values, mode):
    """Left-hand values and expansion columns, one row per ``(x, j)``.

    In magnitude mode every value is divided by its ``x``-dependent unit
    factor, leaving real functions of ``x``.
    """
    q = ctx.q
    lhs, cols, labels = [], [], []
    for pt in points:
        lam = lambda_of(pt, q)
        disc = isinstance(pt, Discrete)
        for j in (1,) if disc else j_values:
            def val(signs, p):
                if disc:
                    return kernel(1, signs, p, pt, ctx.phases, ctx.consts, ctx.qb)
                return kernel_at(j, signs, p, lam, ctx.phases, ctx.consts, ctx.qb)

            def unit(signs, p):
                if mode != "magnitude" or disc:
                    return 1.0
                return kernel_phase(j, signs, p, lam, ctx.phases, ctx.consts, ctx.qb)

            left = val(variant.left, p1) * val(variant.right, p2)
            lhs.append(left / (unit(variant.left, p1) * unit(variant.right, p2)))
            cols.append([val(variant.target, p) / unit(variant.target, p) * p.weight(q) for p in p0s])
            labels.append((pt, j))
    return np.array(lhs, dtype=complex), np.array(cols, dtype=complex).reshape(len(lhs), len(p0s)), labels


def _real_system(M, y):
    return np.vstack([M.real, M.imag]), np.concatenate([y.real, y.imag])


def _rel(a, b):
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a))


def coefficients_fitted(
    variant,
    p1: LatticePoint,
    p2: LatticePoint,
    x_grid,
    window: LatticeWindow,
    ctx,
    mode: str = "magnitude",
    restrict_support: bool = True,
    j_values=None,
    residual_ceiling: float = 1e-4,
    cond_limit: float | None = None,
    rcond: float = 1e-13,
):
    """Least-squares coefficients of a product formula.

    Parameters
    ----------
    variant : ProductVariant or str
    p1, p2 : LatticePoint
    x_grid : sequence of float, Principal or Discrete
        Training spectrum points.
    window : LatticeWindow
        Truncation of the ``p0`` sum.
    ctx : KernelContext
    mode : {"magnitude", "complex"}
        ``"magnitude"`` removes the ``x``-dependent unit factors of every
        kernel before solving, so only magnitudes and the real structure
        are used. ``"complex"`` fits the kernels as they are.
    restrict_support : bool
        Fit only on the sign-rule support. With False every candidate
        ``p0`` is an unknown, which tests whether the rule is recovered.
    j_values : tuple of int, optional
        Stacked multiplicity labels. Defaults to ``(1, 2)`` in magnitude
        mode and ``(1,)`` in complex mode.
    residual_ceiling : float
        Largest acceptable relative training residual.
    cond_limit : float, optional
        Largest acceptable condition number of the column-scaled system.
        Unchecked by default: near-dependent expansion kernels leave some
        coefficients undetermined without spoiling predictions, which the
        report exposes through ``rank``.
    rcond : float
        Relative singular value cutoff of the solve; directions below it
        get the minimum-norm (zero) component.

    Returns
    -------
    CoefficientSet, FitReport

    Raises
    ------
    IllConditioned
        If the column-scaled system's condition number exceeds ``cond_limit``.
    ResidualTooLarge
        If the training residual exceeds ``residual_ceiling``.
    """
    variant = ProductVariant.parse(variant)
    if mode not in ("magnitude", "complex"):
        raise DomainError("mode must be 'magnitude' or 'complex'", mode=mode)
    if j_values is None:
        j_values = (1, 2) if mode == "magnitude" else (1,)
    points = [_as_point(x) for x in x_grid]
    p0s = support(variant, p1, p2, window) if restrict_support else candidates(variant, window)
    q = ctx.q

    if legs_vanish(variant, p1, p2):
        report = FitReport("product_fit", {"train_rel": 0.0}, None, {"unknowns": len(p0s)}, ["an odd factor sits at |p| >= 1: both sides are zero"])
        return CoefficientSet(variant, p1, p2, {p: 0.0 for p in p0s}, "fitted", report), report
    n_support = len(support(variant, p1, p2, window))
    if len(points) < 2 * n_support:
        raise DomainError("training grid needs at least twice as many points as support points", points=len(points), support=n_support)

    y, M, _ = _sides(variant, p1, p2, points, p0s, ctx, j_values, mode)
    A, b = _real_system(M, y)
    scale = np.linalg.norm(A, axis=0)
    live = scale > 0
    notes = []
    if not live.any() and not np.any(b):
        report = FitReport("product_fit", {"train_rel": 0.0}, None, {"unknowns": len(p0s)}, ["zero problem: both sides vanish on the grid"])
        return CoefficientSet(variant, p1, p2, {p: 0.0 for p in p0s}, "fitted", report), report

    As = A[:, live] / scale[live]
    sv = np.linalg.svd(As, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    rank = int(np.sum(sv > rcond * sv[0]))
    if cond_limit is not None and cond > cond_limit:
        raise IllConditioned("product fit is ill-conditioned", condition=cond, variant=variant.tag)
    sol = np.linalg.lstsq(As, b, rcond=rcond)[0]
    c = np.zeros(len(p0s))
    c[live] = sol / scale[live]
    train = _rel(A @ c, b)
    if not live.all():
        notes.append(f"{int((~live).sum())} expansion kernels vanish on the grid; their coefficients are set to 0")

    pair_w = p1.weight(q) * p2.weight(q)
    values = {p: float(v) * pair_w for p, v in zip(p0s, c)}
    report = FitReport(
        "product_fit",
        residuals={"train_rel": train},
        condition=cond,
        fitted={"unknowns": len(p0s), "rank": rank, "mode": mode, "j_values": list(j_values), "restrict_support": restrict_support, "points": len(points)},
        notes=notes,
    )
    cset = CoefficientSet(variant, p1, p2, values, "fitted", report)
    if train > residual_ceiling:
        raise ResidualTooLarge(
            "product fit does not reproduce its training data",
            train_rel=train,
            ceiling=residual_ceiling,
            variant=variant.tag,
            p1=p1.label(),
            p2=p2.label(),
        )
    return cset, report


def verify(variant, p1, p2, coeffs: CoefficientSet, heldout_x, ctx, mode: str = "magnitude", j_values=None, tol: float = 1e-8) -> FitReport:
    """Compare both sides of a product formula on held-out spectrum points.

    Principal points give max and RMS relative residuals per ``j``; in
    magnitude mode they compare ``|LHS|`` with ``|RHS|``. Discrete points
    are checked separately: variants II-IV must give 0 on both sides, and
    variant I must agree within ``tol`` relative to the largest term.
    """
    variant = ProductVariant.parse(variant)
    if j_values is None:
        j_values = (1, 2) if mode == "magnitude" else (1,)
    q = ctx.q
    coeff = coeffs.formula_coefficients(q)
    p0s = sorted(coeff, key=lambda p: (p.k, -p.sign))
    c = np.array([coeff[p] for p in p0s])
    pts = [_as_point(x) for x in heldout_x]
    principal = [p for p in pts if isinstance(p, Principal)]
    discrete = [p for p in pts if isinstance(p, Discrete)]
    residuals, fitted = {}, {"points": len(pts)}
    if principal:
        y, M, labels = _sides(variant, p1, p2, principal, p0s, ctx, j_values, mode)
        rhs = M @ c if len(c) else np.zeros_like(y)
        if mode == "magnitude":
            y, rhs = np.abs(y), np.abs(rhs)
        for j in j_values:
            sel = np.array([lab[1] == j for lab in labels])
            yj, rj = y[sel], rhs[sel]
            norm = np.sqrt(np.mean(np.abs(yj) ** 2))
            err = np.abs(yj - rj)
            residuals[f"j{j}"] = {
                "rms_rel": float(np.sqrt(np.mean(err**2)) / norm) if norm > 0 else float(np.sqrt(np.mean(err**2))),
                "max_rel": float(err.max() / np.abs(yj).max()) if np.abs(yj).max() > 0 else float(err.max()),
            }
        residuals["rms_rel"] = max(r["rms_rel"] for r in residuals.values())
    if discrete:
        y, M, labels = _sides(variant, p1, p2, discrete, p0s, ctx, (1,), "complex")
        terms = M * c[None, :] if len(c) else np.zeros((len(y), 0))
        rhs = terms.sum(axis=1)
        rows = []
        ok = True
        for (pt, _), lv, rv, tr in zip(labels, y, rhs, terms):
            if variant.tag == "I":
                scale = max(abs(lv), np.abs(tr).max(initial=0.0), 1e-300)
                dev = abs(lv - rv) / scale
                good = bool(dev <= tol)
            else:
                dev = max(abs(lv), abs(rv))
                good = bool(lv == 0 and rv == 0)
            ok &= good
            rows.append({"n": pt.n, "lhs": complex(lv), "rhs": complex(rv), "deviation": float(dev), "pass": good})
        residuals["discrete"] = rows
        fitted["discrete_pattern_ok"] = ok
    return FitReport("product_verify", residuals, coeffs.report.condition if coeffs.report else None, fitted)


def normalization_check(coeffs: CoefficientSet, q: float, window: LatticeWindow):
    """``sum_{p0} A_{p0} p0^2 - p1^2 p2^2`` and an estimate of the truncated mass.

    The estimate extends each end of the support that touches the window
    edge by a geometric tail fitted to the last two terms; it is infinite
    when the terms are not decreasing there.

    Returns
    -------
    deviation : float
    FitReport
        Holds the relative deviation, the tail estimate and the terms.
    """
    if coeffs.variant.tag != "I":
        raise DomainError("the normalization identity is stated for variant I")
    target = coeffs.p1.weight(q) * coeffs.p2.weight(q)
    items = sorted(coeffs.values.items(), key=lambda kv: kv[0].k)
    terms = np.array([v * p.weight(q) for p, v in items])
    total = float(terms.sum())
    deviation = total - target

    tail = 0.0
    ks = [p.k for p, _ in items]
    if len(terms) >= 2:
        ends = []
        if ks[0] == window.k_min or (items[0][0].sign < 0 and ks[0] == max(1, window.k_min)):
            ends.append((terms[0], terms[1]))
        if ks[-1] == window.k_max:
            ends.append((terms[-1], terms[-2]))
        for last, prev in ends:
            if last == 0:
                continue
            r = abs(last / prev) if prev != 0 else np.inf
            tail += abs(last) * r / (1 - r) if r < 1 else np.inf
    report = FitReport(
        "normalization",
        residuals={"deviation": deviation, "relative_deviation": deviation / target, "truncation_bound": tail, "relative_bound": tail / target},
        fitted={"sum": total, "target": target, "terms": {p.label(): float(t) for (p, _), t in zip(items, terms)}},
    )
    return deviation, report
