"""Invariant suites behind ``qsphere verify``.

Each suite takes a :class:`~qsphere.config.RunConfig` and returns a plain
dictionary ``{"suite", "pass", "checks", "details"}``. A check is
``{"name", "value", "threshold", "pass"}`` with ``value <= threshold``
meaning success. Randomized draws use ``numpy.random.default_rng(seed)``
and never timestamps, so equal configurations give equal reports.
"""
from __future__ import annotations

import cmath
import math
import warnings

import numpy as np

from .config import RunConfig
from .errors import DivergentRatio, IllConditioned, QSphereError
from .kernels import (
    PP,
    SIGN_PAIRS,
    CompanionConstants,
    Discrete,
    PhaseProvider,
    canonical_lambda,
    fit_phases,
    kernel,
    kernel_at,
    s_function,
)
from .lattice import LatticePoint, LatticeWindow, enumerate_points
from .product import (
    VARIANTS,
    AProvider,
    ProductVariant,
    coefficients_analytic,
    coefficients_fitted,
    legs_vanish,
    normalization_check,
    verify,
)
from .qseries import HyperSeriesSpec, QBase, phi21_continued, phi_series, qpoch_finite, qpoch_infinite
from .transform import KernelContext, KernelTable, SpectralGrid, fit_density

__all__ = [
    "SUITES",
    "build_context",
    "draw_pairs",
    "run_suite",
    "suite_qseries",
    "suite_symmetry",
    "suite_triviality",
    "suite_plancherel",
    "suite_product",
]


def _check(name, value, threshold, **extra):
    value = float(value)
    return {"name": name, "value": value, "threshold": float(threshold), "pass": bool(value <= threshold), **extra}


def _suite(name, checks, details=None):
    return {"suite": name, "pass": all(c["pass"] for c in checks), "checks": checks, "details": details or {}}


def _rel(a, b):
    scale = max(abs(a), abs(b), 1e-300)
    return abs(a - b) / scale


def _phases(cfg: RunConfig, window, grid, consts, qb, for_full_lattice=False):
    spec = cfg.phase_provider
    if spec == "unit" and not for_full_lattice:
        return PhaseProvider()
    if spec in ("unit", "fitted"):
        return fit_phases(grid.xs, window, consts, qb)[0]
    return PhaseProvider.load(spec)


def build_context(cfg: RunConfig, full_lattice: bool = False):
    """Window, grid and kernel context described by a configuration.

    With ``full_lattice=True`` a ``"unit"`` phase provider is replaced by
    fitted phases, because that block is sensitive to the phases.
    """
    qb = QBase(cfg.q)
    window = LatticeWindow(cfg.k_min, cfg.k_max)
    grid = SpectralGrid.gauss_legendre(cfg.nodes, cfg.n_max)
    consts = CompanionConstants()
    phases = _phases(cfg, window, grid, consts, qb, full_lattice)
    return window, grid, KernelContext(qb, consts, phases)


def load_a_provider(cfg: RunConfig):
    return None if cfg.a_provider in ("none", "") else AProvider.load(cfg.a_provider)


# ---------------------------------------------------------------------------
# q-series identities


def _complex_in(rng, lo, hi):
    return rng.uniform(lo, hi) * cmath.exp(1j * rng.uniform(-math.pi, math.pi))


def _log_case(a, b, base, tol=1e-6):
    t = cmath.log(a / b) / math.log(base)
    return abs(t.imag) < tol and abs(t.real - round(t.real)) < tol


def suite_qseries(cfg: RunConfig, draws: int = 200, continuation_draws: int = 100):
    """q-binomial theorem, splitting, index shifts, and the continued 2phi1 inside the disk.

    Identity draws use ``base`` in ``[0.1, 0.75]``, ``|a| <= 1`` and
    ``|z| <= 0.9``. Outside that range the series side of the q-binomial
    theorem can lose most of its digits to cancellation (a sum of order
    1e-8 built from terms of order 1), which says nothing about the
    implementation.
    """
    rng = np.random.default_rng(cfg.seed)
    worst = {"q_binomial": 0.0, "splitting": 0.0, "index_shift": 0.0}
    for _ in range(draws):
        base = rng.uniform(0.1, 0.75)
        a = _complex_in(rng, 0.0, 1.0)
        z = _complex_in(rng, 0.05, 0.9)
        n, m = (int(v) for v in rng.integers(0, 25, size=2))

        lhs = phi_series(HyperSeriesSpec((a,), (), base, z))
        rhs = qpoch_infinite(a * z, base) / qpoch_infinite(z, base)
        worst["q_binomial"] = max(worst["q_binomial"], _rel(lhs, rhs))

        split_inf = _rel(qpoch_infinite(a, base), qpoch_infinite(a, base**2) * qpoch_infinite(a * base, base**2))
        split_fin = _rel(qpoch_finite(a, base, 2 * n), qpoch_finite(a, base**2, n) * qpoch_finite(a * base, base**2, n))
        worst["splitting"] = max(worst["splitting"], split_inf, split_fin)

        shift_fin = _rel(qpoch_finite(a, base, n + m), qpoch_finite(a, base, n) * qpoch_finite(a * base**n, base, m))
        shift_inf = _rel(qpoch_infinite(a, base), qpoch_finite(a, base, n) * qpoch_infinite(a * base**n, base))
        worst["index_shift"] = max(worst["index_shift"], shift_fin, shift_inf)

    cont = 0.0
    done = 0
    while done < continuation_draws:
        base = rng.uniform(0.1, 0.8)
        a = _complex_in(rng, 0.1, 0.95)
        b = _complex_in(rng, 0.1, 1.5)
        c = _complex_in(rng, 0.1, 1.5)
        z = _complex_in(rng, 0.3, 0.95)
        if _log_case(a, b, base):
            continue
        ref = phi_series(HyperSeriesSpec((a, b), (c,), base, z))
        cont = max(cont, _rel(phi21_continued(a, b, c, base, z), ref))
        done += 1

    tol = cfg.tol("qseries")
    checks = [_check(name, v, tol, draws=draws) for name, v in worst.items()]
    checks.append(_check("continuation_inside_disk", cont, cfg.tol("continuation"), draws=continuation_draws))
    return _suite("qseries", checks)


# ---------------------------------------------------------------------------
# kernel invariants


def suite_symmetry(cfg: RunConfig, n_x: int = 32):
    """``|K_j^{s,t}(p; x)| = |K_j^{-s,-t}(p; -x)|`` with ``-x`` taken through its canonical ``lambda``.

    Also checks that the lower S-function at ``lambda = 1`` is finite for
    ``p > 0``, exactly zero for ``p < 0``, and that a sweep over the grid
    and window produces no NaN.
    """
    window, grid, ctx = build_context(cfg)
    qb, consts, phases = ctx.qb, ctx.consts, ctx.phases
    xs = np.polynomial.legendre.leggauss(n_x)[0]
    worst, where = 0.0, None
    per_pair = {}
    for signs in SIGN_PAIRS:
        pts = enumerate_points(window, odd=signs.sigma != signs.tau)
        pair_worst = 0.0
        for j in (1, 2):
            for p in pts:
                row = np.array([kernel_at(j, signs, p, canonical_lambda(x), phases, consts, qb) for x in xs])
                mirror = np.array([kernel_at(j, signs.flipped(), p, canonical_lambda(-x), phases, consts, qb) for x in xs])
                scale = max(np.abs(row).max(), np.abs(mirror).max(), 1e-300)
                dev = float(np.abs(np.abs(row) - np.abs(mirror)).max() / scale)
                pair_worst = max(pair_worst, dev)
                if dev >= worst:
                    worst, where = dev, {"signs": str(signs), "j": j, "p0": p.label()}
        per_pair[str(signs)] = pair_worst

    at_one = {"finite_positive": True, "zero_negative": True}
    for p in enumerate_points(window):
        v = s_function("lower", 1.0, p, consts, qb)
        if p.sign > 0 and not cmath.isfinite(v):
            at_one["finite_positive"] = False
        if p.sign < 0 and v != 0:
            at_one["zero_negative"] = False
    nan_count = 0
    for p in enumerate_points(window):
        for x in grid.xs:
            v = s_function("lower", canonical_lambda(x), p, consts, qb)
            nan_count += int(cmath.isnan(v))

    checks = [
        _check("magnitude_symmetry", worst, cfg.tol("symmetry"), worst_at=where, x_values=n_x),
        _check("lower_at_one_nonfinite_positive", 0 if at_one["finite_positive"] else 1, 0),
        _check("lower_at_one_nonzero_negative", 0 if at_one["zero_negative"] else 1, 0),
        _check("sweep_nan_count", nan_count, 0),
    ]
    return _suite("symmetry", checks, {"per_sign_pair": per_pair})


def _formula_pattern(signs, n, window, ctx):
    counts = {"zero": 0, "finite": 0, "divergent": 0}
    for p in enumerate_points(window, odd=signs.sigma != signs.tau):
        try:
            v = kernel(1, signs, p, Discrete(n), ctx.phases, ctx.consts, ctx.qb, structural=False)
        except DivergentRatio:
            counts["divergent"] += 1
            continue
        counts["zero" if v == 0 else "finite"] += 1
    return counts


def suite_triviality(cfg: RunConfig, pairs_per_variant: int = 2):
    """Discrete-point vanishing of the non-``(+,+)`` kernels and ``0 = 0`` for product variants II-IV."""
    window, grid, ctx = build_context(cfg)
    tol = cfg.tol("discrete")
    worst = 0.0
    formula = {}
    for n in grid.discrete_ns:
        scale = max(
            max(abs(kernel(1, PP, p, Discrete(n), ctx.phases, ctx.consts, ctx.qb)) for p in enumerate_points(window)),
            1e-300,
        )
        for signs in SIGN_PAIRS:
            if signs == PP:
                continue
            for j in (1, 2):
                for p in enumerate_points(window) + enumerate_points(window, odd=True):
                    v = kernel(j, signs, p, Discrete(n), ctx.phases, ctx.consts, ctx.qb)
                    worst = max(worst, abs(v) / scale)
            formula[f"n{n}:{signs}"] = _formula_pattern(signs, n, window, ctx)

    checks = [_check("discrete_vanishing", worst, tol)]
    rng = np.random.default_rng(cfg.seed)
    disc = [Discrete(n) for n in grid.discrete_ns]
    train = list(grid.xs[0::2])
    product_rows = []
    for tag in ("II", "III", "IV"):
        variant = VARIANTS[tag]
        for p1, p2 in draw_pairs(variant, window, rng, pairs_per_variant):
            cset, _ = coefficients_fitted(variant, p1, p2, train, window, ctx, residual_ceiling=math.inf)
            rep = verify(variant, p1, p2, cset, disc, ctx, mode="magnitude")
            ok = bool(rep.fitted.get("discrete_pattern_ok", False))
            product_rows.append({"variant": tag, "p1": p1.label(), "p2": p2.label(), "pass": ok})
    failures = sum(not r["pass"] for r in product_rows)
    checks.append(_check("product_zero_equals_zero_failures", failures, 0))
    return _suite("triviality", checks, {"formula_level": formula, "products": product_rows})


# ---------------------------------------------------------------------------
# Plancherel surrogate


def _density_block(grid, window, ctx, table, parity, sign, cond_limit, diagonal=False):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            d, rep, _ = fit_density(
                grid, window, ctx, parity=parity, sign=sign, fit_normalization=True, table=table, cond_limit=cond_limit, diagonal=diagonal
            )
    except IllConditioned as exc:
        return {"error": exc.name, "reason": exc.reason, "gram_opnorm": math.inf, "min_density": math.nan}
    parts = [d.principal, d.discrete] + ([d.second] if d.second is not None else [])
    return {
        "gram_opnorm": rep.residuals["gram_opnorm"],
        "min_density": float(min(np.min(v, initial=math.inf) for v in parts)),
        "condition": rep.condition,
        "active_nodes": rep.fitted["active_nodes"],
        "clipped_negative": rep.fitted["clipped_negative"],
    }


def suite_plancherel(cfg: RunConfig, diagnostics: bool = True):
    """Fit the density and measure the Gram deviation on each even fixed-sign block and the full lattice.

    With ``diagnostics`` the same blocks are refitted with a separate
    weight per matrix column; those numbers are reported but not checked.
    """
    window, grid, ctx = build_context(cfg)
    table = KernelTable(window, grid, ctx)
    cond = cfg.tol("density_cond")
    checks, details = [], {"blocks": {}, "column_weights": {}}
    for sign in (-1, 1):
        name = f"even_sign{sign:+d}"
        res = _density_block(grid, window, ctx, table, "even", sign, cond)
        details["blocks"][name] = res
        checks.append(_check(f"gram_{name}", res["gram_opnorm"], cfg.tol("gram_block")))
        checks.append(_check(f"negative_density_{name}", max(0.0, -res["min_density"]) if res["min_density"] == res["min_density"] else math.inf, 0.0))
        if diagnostics:
            details["column_weights"][name] = _density_block(grid, window, ctx, table, "even", sign, cond, diagonal=True)

    _, _, ctx_full = build_context(cfg, full_lattice=True)
    table_full = table if ctx_full.phases == ctx.phases else KernelTable(window, grid, ctx_full)
    res = _density_block(grid, window, ctx_full, table_full, "all", None, cond)
    details["blocks"]["full_lattice"] = res
    details["full_lattice_phases"] = ctx_full.phases.name
    checks.append(_check("gram_full_lattice", res["gram_opnorm"], cfg.tol("gram_full")))
    return _suite("plancherel", checks, details)


# ---------------------------------------------------------------------------
# product formulae


def _leg_choices(window: LatticeWindow, odd: bool):
    lo, hi = window.k_min + 2, window.k_max - 2
    out = []
    for k in range(lo, hi + 1):
        for sign in (1, -1):
            if sign < 0 and k < 1:
                continue
            if odd and k < 1:
                continue
            out.append(LatticePoint(sign, k))
    return out


def draw_pairs(variant, window: LatticeWindow, rng, count: int):
    """Seeded ``(p1, p2)`` pairs at least two steps inside the window edge.

    Both legs and ``k1 + k2`` lie in ``[k_min + 2, k_max - 2]``; odd legs
    additionally need ``|p| < 1``. Pairs are distinct and returned in draw
    order.
    """
    variant = ProductVariant.parse(variant)
    odd1, odd2 = variant.odd_legs
    lo, hi = window.k_min + 2, window.k_max - 2
    pool = [
        (p1, p2)
        for p1 in _leg_choices(window, odd1)
        for p2 in _leg_choices(window, odd2)
        if lo <= p1.k + p2.k <= hi and not legs_vanish(variant, p1, p2)
    ]
    if not pool:
        return []
    idx = rng.choice(len(pool), size=min(count, len(pool)), replace=False)
    return [pool[int(i)] for i in idx]


def _product_pair(variant, p1, p2, train, heldout, window, ctx, cfg, provider):
    q = ctx.q
    row = {"variant": variant.tag, "p1": p1.label(), "p2": p2.label()}
    cset, fit = coefficients_fitted(variant, p1, p2, train, window, ctx, restrict_support=True, residual_ceiling=math.inf)
    ver = verify(variant, p1, p2, cset, heldout, ctx, mode="magnitude")
    row["train_rel"] = fit.residuals["train_rel"]
    row["heldout_rms_rel"] = ver.residuals.get("rms_rel", 0.0)
    row["rank"] = fit.fitted.get("rank")
    row["unknowns"] = fit.fitted.get("unknowns")
    row["condition"] = fit.condition

    full, _ = coefficients_fitted(variant, p1, p2, train, window, ctx, restrict_support=False, residual_ceiling=math.inf)
    row["off_support_ratio"] = full.off_support_ratio(window)

    values = np.array(list(cset.values.values()))
    biggest = float(np.abs(values).max(initial=0.0))
    row["min_relative_coefficient"] = float(values.min() / biggest) if biggest > 0 else 0.0

    checks = [
        _check("heldout_rms_rel", row["heldout_rms_rel"], cfg.tol("heldout")),
        _check("off_support_ratio", row["off_support_ratio"], cfg.tol("off_support")),
    ]
    if variant.tag == "I":
        checks.append(_check("negative_coefficient", max(0.0, -row["min_relative_coefficient"]), cfg.tol("nonnegative")))
        dev, norm = normalization_check(cset, q, window)
        target = norm.fitted["target"]
        bound = norm.residuals["truncation_bound"]
        row["normalization"] = {"deviation": dev, "truncation_bound": bound, "target": target}
        checks.append(_check("normalization", abs(dev), bound + cfg.tol("normalization") * target))
    if provider is not None:
        exact = coefficients_analytic(variant, p1, p2, window, q, provider)
        row["analytic_heldout_rms_rel"] = verify(variant, p1, p2, exact, heldout, ctx, mode="magnitude").residuals.get("rms_rel", 0.0)
    row["checks"] = checks
    row["pass"] = all(c["pass"] for c in checks)
    return row


def suite_product(cfg: RunConfig, variants=None, pair=None, pairs_per_variant: int = 10):
    """Held-out product-formula test on seeded pairs (or one given pair).

    Coefficients are fitted in magnitude mode on the even-indexed
    quadrature nodes and evaluated on the odd-indexed ones.
    """
    window, grid, ctx = build_context(cfg)
    provider = load_a_provider(cfg)
    train, heldout = list(grid.xs[0::2]), list(grid.xs[1::2])
    rng = np.random.default_rng(cfg.seed)
    tags = [ProductVariant.parse(v).tag for v in (variants or VARIANTS)]
    rows = []
    for tag in tags:
        variant = VARIANTS[tag]
        pairs = [pair] if pair is not None else draw_pairs(variant, window, rng, pairs_per_variant)
        for p1, p2 in pairs:
            rows.append(_product_pair(variant, p1, p2, train, heldout, window, ctx, cfg, provider))

    checks = []
    for name in ("heldout_rms_rel", "off_support_ratio", "negative_coefficient", "normalization"):
        sel = [c for r in rows for c in r["checks"] if c["name"] == name]
        if not sel:
            continue
        failed = sum(not c["pass"] for c in sel)
        worst = max(sel, key=lambda c: c["value"] - c["threshold"])
        checks.append({"name": f"{name}_failures", "value": failed, "threshold": 0, "pass": failed == 0, "cases": len(sel), "worst_value": worst["value"]})
    return _suite("product", checks, {"pairs": rows, "train_nodes": len(train), "heldout_nodes": len(heldout)})


SUITES = {
    "qseries": suite_qseries,
    "symmetry": suite_symmetry,
    "triviality": suite_triviality,
    "plancherel": suite_plancherel,
    "product": suite_product,
}


def run_suite(name: str, cfg: RunConfig, **kwargs):
    """Run one suite; a library error inside it becomes a failed suite with the error recorded."""
    try:
        return SUITES[name](cfg, **kwargs)
    except IllConditioned:
        raise
    except QSphereError as exc:
        if exc.exit_code == 2:
            raise
        return {"suite": name, "pass": False, "checks": [], "details": {"error": exc.name, "reason": exc.reason, "message": str(exc)}}
