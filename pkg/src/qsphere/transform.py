"""Graded spherical Fourier transform, its inverse, and the density fit.

A :class:`SphericalField` stores, for every principal node and ``j``, a
2x2 matrix with layout ``[[(+,+), (-,+)], [(+,-), (-,-)]]``, plus one
scalar per discrete point. Even input feeds only the diagonal and odd
input only the off-diagonal, so the grading is preserved exactly.

The inverse pairs each matrix entry with the conjugate of the kernel that
produced it, weighted by ``d(x)`` and the quadrature weight.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .errors import DomainError, GridMismatch, IllConditioned, NegativePressure
from .kernels import MM, MP, PM, PP, CompanionConstants, Discrete, PhaseProvider, canonical_lambda, kernel_at, lambda_of
from .lattice import GradedFunction, LatticeWindow, enumerate_points
from .qseries import QBase
from .reports import FitReport

__all__ = [
    "SpectralGrid",
    "KernelContext",
    "KernelTable",
    "SphericalField",
    "Density",
    "forward",
    "inverse",
    "gram_matrix",
    "fit_density",
    "roundtrip_report",
]

# matrix position -> sign pair, fixed by the layout above
ENTRY_SIGNS = {(0, 0): PP, (0, 1): MP, (1, 0): PM, (1, 1): MM}
ENTRY_NAMES = {(0, 0): "++", (0, 1): "-+", (1, 0): "+-", (1, 1): "--"}


@dataclass(frozen=True)
class SpectralGrid:
    """Principal quadrature nodes in ``(0, 1]`` plus the discrete indices kept."""

    principal: tuple
    discrete_ns: tuple = (1, 2, 3, 4)
    j_values: tuple = (1, 2)

    def __post_init__(self):
        object.__setattr__(self, "principal", tuple((float(x), float(w)) for x, w in self.principal))
        object.__setattr__(self, "discrete_ns", tuple(int(n) for n in self.discrete_ns))
        for x, w in self.principal:
            if not 0.0 < x <= 1.0 or w <= 0:
                raise DomainError("principal nodes need x in (0, 1] and positive weight", x=x, w=w)
        if any(n < 1 for n in self.discrete_ns):
            raise DomainError("discrete indices start at 1")

    @classmethod
    def gauss_legendre(cls, nodes: int = 64, n_max: int = 4):
        """Gauss-Legendre rule mapped to ``(0, 1)``; weights sum to 1."""
        if nodes < 1:
            raise DomainError("need at least one quadrature node", nodes=nodes)
        t, w = np.polynomial.legendre.leggauss(nodes)
        return cls(tuple(zip((t + 1) / 2, w / 2)), tuple(range(1, n_max + 1)))

    @property
    def xs(self):
        return np.array([x for x, _ in self.principal])

    @property
    def ws(self):
        return np.array([w for _, w in self.principal])

    def subset(self, mask) -> "SpectralGrid":
        return SpectralGrid(tuple(p for p, m in zip(self.principal, mask) if m), self.discrete_ns, self.j_values)

    def to_json(self):
        return {
            "principal": [{"x": x, "w": w} for x, w in self.principal],
            "discrete_ns": list(self.discrete_ns),
            "j_values": list(self.j_values),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(tuple((p["x"], p["w"]) for p in obj["principal"]), tuple(obj.get("discrete_ns", ())), tuple(obj.get("j_values", (1, 2))))


@dataclass(frozen=True)
class KernelContext:
    """Everything a kernel evaluation needs besides its arguments."""

    qb: QBase
    consts: CompanionConstants = field(default_factory=CompanionConstants)
    phases: PhaseProvider = field(default_factory=PhaseProvider)

    @property
    def q(self):
        return self.qb.q

    def with_consts(self, consts):
        return KernelContext(self.qb, consts, self.phases)

    def with_phases(self, phases):
        return KernelContext(self.qb, self.consts, phases)


class KernelTable:
    """Kernel values for one window and grid, in canonical point order.

    Attributes
    ----------
    even_points, odd_points : list of LatticePoint
    principal : dict
        ``(j, (r, c)) -> array (n_points, n_nodes)``; rows are even points
        for diagonal entries and odd points for off-diagonal ones.
    discrete : ndarray, shape (n_even, n_discrete)
        ``K_1^{+,+}`` at ``mu(q^{2n+1})``.
    """

    def __init__(self, window: LatticeWindow, grid: SpectralGrid, ctx: KernelContext):
        self.window, self.grid, self.ctx = window, grid, ctx
        self.even_points = enumerate_points(window)
        self.odd_points = enumerate_points(window, odd=True)
        lams = [canonical_lambda(x) for x in grid.xs]
        self.principal = {}
        for j in grid.j_values:
            for pos, signs in ENTRY_SIGNS.items():
                pts = self.even_points if pos[0] == pos[1] else self.odd_points
                self.principal[(j, pos)] = np.array(
                    [[kernel_at(j, signs, p, lam, ctx.phases, ctx.consts, ctx.qb) for lam in lams] for p in pts],
                    dtype=complex,
                ).reshape(len(pts), len(lams))
        self.discrete = np.array(
            [[kernel_at(1, PP, p, lambda_of(Discrete(n), ctx.q), ctx.phases, ctx.consts, ctx.qb) for n in grid.discrete_ns] for p in self.even_points],
            dtype=complex,
        ).reshape(len(self.even_points), len(grid.discrete_ns))

    def rescaled(self, factors: dict, ctx: KernelContext) -> "KernelTable":
        """The table for ``ctx``, whose ``rho`` is this table's times ``factors[p]``.

        Kernels are linear in ``rho``, so rows are multiplied instead of
        recomputed.
        """
        out = object.__new__(KernelTable)
        out.window, out.grid, out.ctx = self.window, self.grid, ctx
        out.even_points, out.odd_points = self.even_points, self.odd_points
        fe = np.array([factors.get(p, 1.0) for p in self.even_points])
        fo = np.array([factors.get(p, 1.0) for p in self.odd_points])
        out.principal = {key: arr * (fe if key[1][0] == key[1][1] else fo)[:, None] for key, arr in self.principal.items()}
        out.discrete = self.discrete * fe[:, None]
        return out

    def weights(self, parity: str):
        pts = self.even_points if parity == "even" else self.odd_points
        return np.array([p.weight(self.ctx.q) for p in pts])


@dataclass
class Density:
    """Nonnegative weights per principal node and per discrete index.

    By default one weight per node multiplies all four matrix entries.
    When ``second`` is given the weight becomes diagonal in the column
    index: ``principal`` weighs the first column ``(+,+), (+,-)`` and
    ``second`` the second column ``(-,+), (-,-)``.
    """

    principal: np.ndarray
    discrete: np.ndarray
    second: np.ndarray | None = None

    def __post_init__(self):
        self.principal = np.asarray(self.principal, dtype=float)
        self.discrete = np.asarray(self.discrete, dtype=float)
        if self.second is not None:
            self.second = np.asarray(self.second, dtype=float)
            if self.second.shape != self.principal.shape:
                raise DomainError("second-column density must match the principal nodes")
        parts = [self.principal, self.discrete] + ([self.second] if self.second is not None else [])
        if any(np.any(v < 0) for v in parts):
            raise DomainError("density must be nonnegative")

    @property
    def diagonal(self) -> bool:
        return self.second is not None

    def column(self, c: int) -> np.ndarray:
        """Principal weights applied to matrix column ``c``."""
        return self.second if (c == 1 and self.second is not None) else self.principal

    @classmethod
    def uniform(cls, grid: SpectralGrid, value: float = 1.0):
        return cls(np.full(len(grid.principal), value), np.zeros(len(grid.discrete_ns)))

    def to_json(self):
        out = {"principal": [float(v) for v in self.principal], "discrete": [float(v) for v in self.discrete]}
        if self.second is not None:
            out["second"] = [float(v) for v in self.second]
        return out

    @classmethod
    def from_json(cls, obj):
        second = obj.get("second")
        return cls(
            np.array(obj["principal"], dtype=float),
            np.array(obj.get("discrete", []), dtype=float),
            None if second is None else np.array(second, dtype=float),
        )


@dataclass
class SphericalField:
    """Transform output: ``principal[i, j-1]`` is a 2x2 matrix, ``discrete[n]`` a scalar."""

    grid: SpectralGrid
    principal: np.ndarray
    discrete: np.ndarray
    density: Density | None = None

    def to_json(self):
        rows = []
        for i, (x, w) in enumerate(self.grid.principal):
            for jj, j in enumerate(self.grid.j_values):
                m = self.principal[i, jj]
                rows.append({"x": x, "w": w, "j": j, "m": [[float(v.real), float(v.imag)] for v in m.ravel()]})
        out = {
            "grid": self.grid.to_json(),
            "principal": rows,
            "discrete": [{"n": n, "re": float(v.real), "im": float(v.imag)} for n, v in zip(self.grid.discrete_ns, self.discrete)],
        }
        if self.density is not None:
            out["density"] = self.density.to_json()
        return out

    @classmethod
    def from_json(cls, obj):
        try:
            grid = SpectralGrid.from_json(obj["grid"])
            nj = len(grid.j_values)
            principal = np.zeros((len(grid.principal), nj, 2, 2), dtype=complex)
            index = {x: i for i, (x, _) in enumerate(grid.principal)}
            for r in obj["principal"]:
                vals = np.array([complex(a, b) for a, b in r["m"]]).reshape(2, 2)
                principal[index[float(r["x"])], grid.j_values.index(int(r["j"]))] = vals
            discrete = np.zeros(len(grid.discrete_ns), dtype=complex)
            for r in obj.get("discrete", []):
                discrete[grid.discrete_ns.index(int(r["n"]))] = complex(r["re"], r["im"])
            dens = Density.from_json(obj["density"]) if obj.get("density") else None
            return cls(grid, principal, discrete, dens)
        except (KeyError, ValueError, TypeError) as exc:
            raise DomainError(f"malformed spherical field: {exc}") from exc

    def to_csv(self) -> str:
        """One row per ``(x, j, entry)`` plus one row per discrete point."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["series", "x", "j", "entry", "re", "im", "abs"])
        for i, (x, _) in enumerate(self.grid.principal):
            for jj, j in enumerate(self.grid.j_values):
                for pos, name in ENTRY_NAMES.items():
                    v = self.principal[i, jj][pos]
                    wr.writerow(["principal", repr(x), j, name, repr(float(v.real)), repr(float(v.imag)), repr(float(abs(v)))])
        for n, v in zip(self.grid.discrete_ns, self.discrete):
            wr.writerow([f"discrete:n={n}", "", "", "++", repr(float(v.real)), repr(float(v.imag)), repr(float(abs(v)))])
        return buf.getvalue()

    def is_diagonal(self) -> bool:
        return bool(np.all(self.principal[:, :, 0, 1] == 0) and np.all(self.principal[:, :, 1, 0] == 0))

    def is_off_diagonal(self) -> bool:
        return bool(np.all(self.principal[:, :, 0, 0] == 0) and np.all(self.principal[:, :, 1, 1] == 0) and np.all(self.discrete == 0))


def _vectors(f: GradedFunction, table: KernelTable):
    if f.window != table.window or f.q != table.ctx.q:
        raise DomainError("function window or q does not match the kernel table")
    fe = np.array([f.even.get(p, 0) for p in table.even_points], dtype=complex)
    go = np.array([f.odd.get(p, 0) for p in table.odd_points], dtype=complex)
    return fe, go


def forward(f: GradedFunction, grid: SpectralGrid, ctx: KernelContext, table: KernelTable | None = None) -> SphericalField:
    """Transform a graded function to a spherical field.

    Each diagonal entry is ``sum_p K(p; x) f(p) p^2`` with the entry's
    kernel, off-diagonal entries use the odd part ``g``, and the discrete
    values use ``K_1^{+,+}``.
    """
    table = table or KernelTable(f.window, grid, ctx)
    if table.grid != grid:
        raise GridMismatch("kernel table was built on another grid")
    fe, go = _vectors(f, table)
    fe = fe * table.weights("even")
    go = go * table.weights("odd")
    nodes, nj = len(grid.principal), len(grid.j_values)
    out = np.zeros((nodes, nj, 2, 2), dtype=complex)
    for jj, j in enumerate(grid.j_values):
        for pos in ENTRY_SIGNS:
            vec = fe if pos[0] == pos[1] else go
            if np.any(vec != 0):
                out[:, jj, pos[0], pos[1]] = vec @ table.principal[(j, pos)]
    disc = fe @ table.discrete if np.any(fe != 0) else np.zeros(len(grid.discrete_ns), dtype=complex)
    return SphericalField(grid, out, disc)


def inverse(F: SphericalField, density: Density, window: LatticeWindow, ctx: KernelContext, grid: SpectralGrid | None = None, table: KernelTable | None = None) -> GradedFunction:
    """Map a spherical field back to a graded function.

    Raises
    ------
    GridMismatch
        If ``grid`` (or the table's grid) differs from the field's grid.
    """
    grid = grid or F.grid
    if F.grid != grid or (table is not None and table.grid != grid):
        raise GridMismatch("spherical field grid differs from the requested grid")
    if len(density.principal) != len(grid.principal) or len(density.discrete) != len(grid.discrete_ns):
        raise GridMismatch("density does not match the grid")
    table = table or KernelTable(window, grid, ctx)
    even = np.zeros(len(table.even_points), dtype=complex)
    odd = np.zeros(len(table.odd_points), dtype=complex)
    for jj, j in enumerate(grid.j_values):
        for pos in ENTRY_SIGNS:
            col = F.principal[:, jj, pos[0], pos[1]] * density.column(pos[1]) * grid.ws
            if not np.any(col != 0):
                continue
            contrib = table.principal[(j, pos)].conj() @ col
            if pos[0] == pos[1]:
                even += contrib
            else:
                odd += contrib
    dd = F.discrete * density.discrete
    if np.any(dd != 0):
        even += table.discrete.conj() @ dd
    return GradedFunction(
        ctx.q,
        window,
        {p: v for p, v in zip(table.even_points, even) if v != 0},
        {p: v for p, v in zip(table.odd_points, odd) if v != 0},
    )


def _basis_blocks(table: KernelTable, parity: str, sign):
    """Rows (points) selected for a Gram computation, with their kernel stacks."""
    blocks = []
    if parity in ("even", "all"):
        idx = [i for i, p in enumerate(table.even_points) if sign is None or p.sign == sign]
        blocks.append(("even", idx))
    if parity in ("odd", "all"):
        idx = [i for i, p in enumerate(table.odd_points) if sign is None or p.sign == sign]
        blocks.append(("odd", idx))
    return blocks


def _gram_pieces(table: KernelTable, parity="even", sign=None, diagonal=False):
    """Per-node contributions ``B_i`` with ``Gram(d) = sum_i d_i B_i``.

    The basis is ``delta_p / |p|`` (unit vectors of the weighted ``l^2``),
    so each transformed row is ``K(p; .) |p|``. With ``diagonal=True`` the
    principal pieces are split by matrix column and stacked first-column
    nodes, then second-column nodes.
    """
    grid = table.grid
    labels = []
    sizes = []
    for par, idx in _basis_blocks(table, parity, sign):
        pts = table.even_points if par == "even" else table.odd_points
        labels += [(par, pts[i]) for i in idx]
        sizes.append((par, idx))
    n = len(labels)
    n_p = len(grid.principal)
    Bp = np.zeros(((2 if diagonal else 1) * n_p, n, n), dtype=complex)
    Bd = np.zeros((len(grid.discrete_ns), n, n), dtype=complex)
    offset = 0
    for par, idx in sizes:
        pts = table.even_points if par == "even" else table.odd_points
        scale = np.array([abs(pts[i].value(table.ctx.q)) for i in idx])
        sl = slice(offset, offset + len(idx))
        positions = [(0, 0), (1, 1)] if par == "even" else [(0, 1), (1, 0)]
        for j in grid.j_values:
            for pos in positions:
                R = table.principal[(j, pos)][idx] * scale[:, None]
                start = n_p * pos[1] if diagonal else 0
                Bp[start : start + n_p, sl, sl] += np.einsum("ai,bi->iab", R, R.conj()) * grid.ws[:, None, None]
        if par == "even" and len(grid.discrete_ns):
            R = table.discrete[idx] * scale[:, None]
            Bd[:, sl, sl] += np.einsum("ai,bi->iab", R, R.conj())
        offset += len(idx)
    return labels, Bp, Bd


def gram_matrix(table: KernelTable, density: Density, parity="even", sign=None):
    """Gram matrix ``<F e_p, F e_p'>_d`` on the selected unit basis vectors."""
    labels, Bp, Bd = _gram_pieces(table, parity, sign, diagonal=density.diagonal)
    weights = np.concatenate([density.principal, density.second]) if density.diagonal else density.principal
    G = np.tensordot(weights, Bp, axes=1) + np.tensordot(density.discrete, Bd, axes=1)
    return labels, G


def _stack(B, mask):
    # real and imaginary parts of the selected entries, one column per unknown
    return np.concatenate([B[:, mask].real, B[:, mask].imag], axis=1).T


def fit_density(
    grid: SpectralGrid,
    window: LatticeWindow,
    ctx: KernelContext,
    parity: str = "even",
    sign: int | None = None,
    fit_normalization: bool = False,
    tikhonov: float = 0.0,
    cond_limit: float = 1e10,
    table: KernelTable | None = None,
    diagonal: bool = False,
):
    """Fit ``d >= 0`` so that inverse(forward(.)) is the identity on a basis block.

    The objective ``sum_p ||inverse(forward(e_p), d) - e_p||^2`` equals
    ``||Gram(d) - I||_F^2`` on unit basis vectors and is linear in ``d``;
    it is solved by nonnegative least squares.

    With ``fit_normalization=True`` the per-point prefactor ``rho`` is
    fitted too: the NNLS targets zero off-diagonal Gram entries plus a
    fixed trace (invariant under row rescaling), and the row corrections
    are then read off the diagonal. The corrected constants are returned
    in the report under ``fitted["normalization"]`` and as the third value.

    With ``diagonal=True`` the two matrix columns get independent weights
    (see :class:`Density`); the default is one scalar weight per node.

    Returns
    -------
    Density, FitReport, KernelContext
        The context is ``ctx`` itself unless the normalization was fitted.

    Raises
    ------
    IllConditioned
        If the columns carrying positive weight form a system with
        condition number above ``cond_limit``.

    Warns
    -----
    NegativePressure
        If the unconstrained least-squares solution had negative entries.
    """
    if len(grid.principal) + len(grid.discrete_ns) < 1:
        raise DomainError("empty grid")
    table = table or KernelTable(window, grid, ctx)
    labels, Bp, Bd = _gram_pieces(table, parity, sign, diagonal=diagonal)
    n = len(labels)
    if n == 0:
        raise DomainError("no basis vectors selected")
    B = np.concatenate([Bp, Bd], axis=0)

    row_scale = np.ones(n)
    if fit_normalization:
        diag = np.real(np.einsum("iaa->ia", Bp)).sum(axis=0)
        row_scale = 1 / np.sqrt(np.where(diag > 0, diag, 1.0))
        B = B * np.outer(row_scale, row_scale)[None]
        off = ~np.eye(n, dtype=bool)
        A = _stack(B.reshape(len(B), -1), off.ravel())
        trace = np.real(np.einsum("iaa->i", B))
        A = np.vstack([A, trace[None, :]])
        b = np.concatenate([np.zeros(A.shape[0] - 1), [float(n)]])
    else:
        A = _stack(B.reshape(len(B), -1), np.ones(n * n, dtype=bool))
        target = np.eye(n, dtype=complex).ravel()
        b = np.concatenate([target.real, target.imag])

    if tikhonov > 0:
        A = np.vstack([A, np.sqrt(tikhonov) * np.eye(A.shape[1])])
        b = np.concatenate([b, np.zeros(A.shape[1])])

    col = np.linalg.norm(A, axis=0)
    col[col == 0] = 1.0
    As = A / col
    sol, _ = nnls(As, b, maxiter=50 * As.shape[1])
    d = sol / col

    unconstrained = np.linalg.lstsq(As, b, rcond=None)[0]
    clipped = int(np.sum(unconstrained < -1e-12 * max(np.abs(unconstrained).max(), 1e-300)))
    if clipped:
        warnings.warn(NegativePressure(f"{clipped} unconstrained density components were negative and clipped"), stacklevel=2)

    active = sol > 0
    cond = float(np.linalg.cond(As[:, active])) if active.any() else float("inf")
    if active.any() and cond > cond_limit:
        raise IllConditioned("density fit is ill-conditioned on its active set", condition=cond)

    n_p = len(grid.principal)
    if diagonal:
        density = Density(d[:n_p], d[2 * n_p :], d[n_p : 2 * n_p])
    else:
        density = Density(d[:n_p], d[n_p:])
    new_ctx = ctx
    fitted = {"active_nodes": int(active.sum()), "clipped_negative": clipped}
    if fit_normalization:
        G = np.tensordot(d, B, axes=1)
        corr = row_scale / np.sqrt(np.maximum(np.real(np.diag(G)), 1e-300))
        # gauge: geometric mean of the corrections is 1; d absorbs the rest
        gm = np.exp(np.mean(np.log(corr)))
        corr = corr / gm
        density = Density(
            density.principal * gm**2,
            density.discrete * gm**2,
            None if density.second is None else density.second * gm**2,
        )
        factors = {}
        for (par, p), c in zip(labels, corr):
            factors.setdefault(p, c)
        new_ctx = ctx.with_consts(ctx.consts.rescaled(factors))
        fitted["normalization"] = {p.label(): float(c) for (_, p), c in zip(labels, corr)}
    _, G = gram_matrix(table.rescaled(factors, new_ctx) if fit_normalization else table, density, parity, sign)
    resid = np.linalg.norm(G - np.eye(n), axis=1)
    report = FitReport(
        "density",
        residuals={"per_point": {f"{par}:{p.label()}": float(r) for (par, p), r in zip(labels, resid)}, "gram_opnorm": float(np.linalg.norm(G - np.eye(n), 2))},
        condition=cond,
        fitted=fitted,
    )
    return density, report, new_ctx


def roundtrip_report(window: LatticeWindow, grid: SpectralGrid, density: Density, ctx: KernelContext, parity="all", sign=None, table: KernelTable | None = None) -> FitReport:
    """Compare ``<F e_p, F e_p'>_d`` with ``<e_p, e_p'>`` on a basis block.

    Reports the largest entrywise deviation, the operator-norm deviation,
    per-point residuals, and the size of the last discrete term kept.
    """
    table = table or KernelTable(window, grid, ctx)
    labels, G = gram_matrix(table, density, parity, sign)
    E = G - np.eye(len(labels))
    tail = 0.0
    if len(grid.discrete_ns):
        w = np.array([abs(p.value(ctx.q)) ** 2 for p in table.even_points])
        tail = float(np.max(density.discrete[-1] * np.abs(table.discrete[:, -1]) ** 2 * w, initial=0.0))
    even_idx = [i for i, (par, _) in enumerate(labels) if par == "even"]
    odd_idx = [i for i, (par, _) in enumerate(labels) if par == "odd"]
    cross = float(np.abs(G[np.ix_(even_idx, odd_idx)]).max(initial=0.0))
    return FitReport(
        "roundtrip",
        residuals={
            "max_entry_deviation": float(np.abs(E).max(initial=0.0)),
            "gram_opnorm": float(np.linalg.norm(E, 2)) if E.size else 0.0,
            "per_point": {f"{par}:{p.label()}": float(r) for (par, p), r in zip(labels, np.linalg.norm(E, axis=1))},
            "even_odd_cross": cross,
            "last_discrete_term": tail,
        },
        fitted={"n_basis": len(labels)},
    )
