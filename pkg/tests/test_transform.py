import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsphere.errors import DomainError, GridMismatch
from qsphere.lattice import GradedFunction, LatticePoint, LatticeWindow, enumerate_points
from qsphere.qseries import QBase
from qsphere.transform import (
    Density,
    KernelContext,
    KernelTable,
    SpectralGrid,
    SphericalField,
    fit_density,
    forward,
    gram_matrix,
    inverse,
    roundtrip_report,
)

WIN = LatticeWindow(-2, 3)
GRID = SpectralGrid.gauss_legendre(24, 3)
CTX = KernelContext(QBase(0.5))


@pytest.fixture(scope="module")
def table():
    return KernelTable(WIN, GRID, CTX)


def random_function(rng, even=True, odd=True):
    def draw(points):
        return {p: complex(*rng.normal(size=2)) for p in points if rng.random() < 0.7}

    return GradedFunction(0.5, WIN, draw(enumerate_points(WIN)) if even else {}, draw(enumerate_points(WIN, odd=True)) if odd else {})


def test_grid_construction():
    g = SpectralGrid.gauss_legendre(8, 2)
    assert np.all((g.xs > 0) & (g.xs < 1))
    assert g.ws.sum() == pytest.approx(1.0)
    assert g.discrete_ns == (1, 2)
    assert SpectralGrid.from_json(json.loads(json.dumps(g.to_json()))) == g
    with pytest.raises(DomainError):
        SpectralGrid(((1.5, 0.1),))
    with pytest.raises(DomainError):
        SpectralGrid(((0.5, 0.1),), (0, 1))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_grading_is_preserved(seed, table):
    rng = np.random.default_rng(seed)
    even = forward(random_function(rng, odd=False), GRID, CTX, table)
    assert even.is_diagonal()
    odd = forward(random_function(rng, even=False), GRID, CTX, table)
    assert odd.is_off_diagonal()


def test_forward_is_linear(table):
    rng = np.random.default_rng(1)
    f, g = random_function(rng), random_function(rng)
    a, b = 0.3 - 1j, 2.0
    lhs = forward(f.scaled_sum(a, g, b), GRID, CTX, table)
    F, G = forward(f, GRID, CTX, table), forward(g, GRID, CTX, table)
    assert np.allclose(lhs.principal, a * F.principal + b * G.principal, rtol=1e-12, atol=1e-14)
    assert np.allclose(lhs.discrete, a * F.discrete + b * G.discrete, rtol=1e-12, atol=1e-14)


def test_field_json_and_csv(table):
    f = random_function(np.random.default_rng(2))
    F = forward(f, GRID, CTX, table)
    again = SphericalField.from_json(json.loads(json.dumps(F.to_json())))
    assert np.array_equal(again.principal, F.principal)
    assert np.array_equal(again.discrete, F.discrete)
    lines = F.to_csv().strip().splitlines()
    assert len(lines) == 1 + 24 * 2 * 4 + 3
    with pytest.raises(DomainError):
        SphericalField.from_json({"grid": GRID.to_json()})


def test_inverse_rejects_another_grid(table):
    F = forward(GradedFunction.delta(0.5, WIN, LatticePoint(1, 1)), GRID, CTX, table)
    with pytest.raises(GridMismatch):
        inverse(F, Density.uniform(GRID), WIN, CTX, grid=SpectralGrid.gauss_legendre(12, 3))
    with pytest.raises(GridMismatch):
        inverse(F, Density.uniform(SpectralGrid.gauss_legendre(12, 3)), WIN, CTX)


def test_inverse_of_forward_is_the_gram_column(table):
    d = Density(np.linspace(0.5, 1.5, 24), np.array([0.2, 0.1, 0.05]))
    p = LatticePoint(-1, 2)
    labels, G = gram_matrix(table, d, "even")
    back = inverse(forward(GradedFunction.delta(0.5, WIN, p), GRID, CTX, table), d, WIN, CTX, table=table)
    col = labels.index(("even", p))
    # basis vectors are delta_p / |p|, so the weights |p| / |r| convert between the two
    for (_, r), g in zip(labels, G[:, col]):
        expected = np.conj(g) * abs(p.value(0.5)) / abs(r.value(0.5))
        assert back.even.get(r, 0) == pytest.approx(expected, rel=1e-10, abs=1e-12 * abs(G).max())
    assert set(back.even) <= set(enumerate_points(WIN))
    assert not back.odd


def test_density_validation_and_json():
    d = Density(np.ones(3), np.zeros(2), np.full(3, 0.5))
    assert d.diagonal
    assert np.array_equal(Density.from_json(d.to_json()).second, d.second)
    with pytest.raises(DomainError):
        Density(np.array([1.0, -0.1]), np.zeros(1))
    with pytest.raises(DomainError):
        Density(np.ones(3), np.zeros(1), np.ones(2))


def test_rescaled_table_matches_a_rebuild(table):
    factors = {LatticePoint(1, 1): 2.0, LatticePoint(-1, 2): 0.25, LatticePoint(1, 3): 3.0}
    ctx = CTX.with_consts(CTX.consts.rescaled(factors))
    fast, slow = table.rescaled(factors, ctx), KernelTable(WIN, GRID, ctx)
    for key in slow.principal:
        assert np.allclose(fast.principal[key], slow.principal[key], rtol=1e-14, atol=0)
    assert np.allclose(fast.discrete, slow.discrete, rtol=1e-14, atol=0)


def test_column_weighted_density_inverts_the_negative_block(table):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d, report, ctx = fit_density(GRID, WIN, CTX, sign=-1, fit_normalization=True, diagonal=True, table=table)
    assert d.diagonal
    assert np.all(d.principal >= 0) and np.all(d.second >= 0) and np.all(d.discrete >= 0)
    assert report.residuals["gram_opnorm"] < 1e-10
    check = roundtrip_report(WIN, GRID, d, ctx, parity="even", sign=-1)
    assert check.residuals["gram_opnorm"] < 1e-10


def test_density_fit_is_nonnegative_without_normalization(table):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d, report, ctx = fit_density(GRID, WIN, CTX, sign=-1, table=table)
    assert ctx is CTX
    assert np.all(d.principal >= 0) and np.all(d.discrete >= 0)
    assert "gram_opnorm" in report.residuals


def test_density_fit_needs_a_basis(table):
    with pytest.raises(DomainError):
        fit_density(GRID, LatticeWindow(-2, 0), CTX, parity="odd", sign=-1)


def test_roundtrip_report_fields(table):
    d = Density.uniform(GRID, 1.0)
    rep = roundtrip_report(WIN, GRID, d, CTX, table=table)
    res = rep.residuals
    assert set(res) == {"max_entry_deviation", "gram_opnorm", "per_point", "even_odd_cross", "last_discrete_term"}
    assert len(res["per_point"]) == len(enumerate_points(WIN)) + len(enumerate_points(WIN, odd=True))
    # grading: even and odd parts never mix in the Gram matrix
    assert res["even_odd_cross"] == 0.0
