import cmath
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsphere.errors import DivergentRatio, DomainError
from qsphere.kernels import (
    MM,
    MP,
    PM,
    PP,
    SIGN_PAIRS,
    CompanionConstants,
    Complementary,
    Discrete,
    PhaseProvider,
    Principal,
    SignPair,
    canonical_lambda,
    fit_phases,
    kernel,
    kernel_at,
    kernel_phase,
    lambda_of,
    s_function,
)
from qsphere.lattice import LatticePoint, LatticeWindow, enumerate_points
from qsphere.qseries import QBase

QB = QBase(0.5)
C = CompanionConstants()
UNIT = PhaseProvider()
WIN = LatticeWindow(-6, 6)


def K(j, signs, p, x, phases=UNIT, consts=C):
    return kernel_at(j, signs, p, canonical_lambda(x), phases, consts, QB)


def test_sign_pair_parsing():
    assert SignPair.parse("+-") == PM
    assert str(MP) == "-+"
    assert PP.flipped() == MM
    with pytest.raises(DomainError):
        SignPair.parse("+0")


def test_spectral_parameters():
    assert lambda_of(Principal(1.0), 0.5) == pytest.approx(1.0)
    assert lambda_of(Discrete(1), 0.5) == pytest.approx(0.125)
    lam = lambda_of(Complementary(1.1), 0.5)
    assert (lam + 1 / lam).real / 2 == pytest.approx(1.1)
    assert abs(canonical_lambda(0.3)) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        Principal(1.5)
    with pytest.raises(DomainError):
        lambda_of(Complementary(3.0), 0.5)


def test_lower_s_function_at_lambda_one():
    for p in enumerate_points(WIN):
        v = s_function("lower", 1.0, p, C, QB)
        if p.sign < 0:
            assert v == 0
        else:
            assert cmath.isfinite(v) and v != 0


def test_s_function_argument_checks():
    with pytest.raises(DomainError):
        s_function("middle", 1.0, LatticePoint(1, 1), C, QB)
    with pytest.raises(DomainError):
        s_function("lower", 0.0, LatticePoint(1, 1), C, QB)


def test_no_nan_on_interior_sweep():
    for signs in SIGN_PAIRS:
        for p in enumerate_points(WIN, odd=signs in (PM, MP)):
            for x in np.linspace(-0.99, 0.99, 17):
                assert not cmath.isnan(K(1, signs, p, x))


def test_minus_kernels_have_a_pole_at_the_edge():
    with pytest.raises(DivergentRatio):
        K(1, MM, LatticePoint(-1, 1), 1.0)


@settings(max_examples=40, deadline=None)
@given(k=st.integers(-6, 6), sign=st.sampled_from([1, -1]), j=st.sampled_from([1, 2]), signs=st.sampled_from(SIGN_PAIRS))
def test_magnitude_symmetry_through_canonical_representative(k, sign, j, signs):
    if sign < 0 and k < 1:
        return
    if signs in (PM, MP) and k < 1:
        return
    p = LatticePoint(sign, k)
    x = np.linspace(-0.95, 0.95, 9)
    a = np.array([K(j, signs, p, v) for v in x])
    b = np.array([kernel_at(j, signs.flipped(), p, canonical_lambda(-v), UNIT, C, QB) for v in x])
    scale = max(np.abs(a).max(), np.abs(b).max())
    assert np.abs(np.abs(a) - np.abs(b)).max() <= 1e-10 * scale


def test_minus_kernels_come_from_symmetry():
    p, lam = LatticePoint(1, 2), canonical_lambda(0.4)
    for signs in (MP, MM):
        st_sign = signs.sigma * signs.tau
        assert kernel_at(1, signs, p, lam, UNIT, C, QB) == st_sign * kernel_at(1, signs.flipped(), p, -lam, UNIT, C, QB)


def test_second_multiplicity_sign_table():
    lam = canonical_lambda(0.35)
    pos, neg = LatticePoint(1, 1), LatticePoint(-1, 1)
    assert kernel_at(2, PP, pos, lam, UNIT, C, QB) == -kernel_at(1, PP, pos, lam, UNIT, C, QB)
    assert kernel_at(2, PP, neg, lam, UNIT, C, QB) == kernel_at(1, PP, neg, lam, UNIT, C, QB)


@pytest.mark.parametrize("signs", SIGN_PAIRS)
def test_kernel_phase_leaves_a_real_function(signs):
    odd = signs in (PM, MP)
    for p in enumerate_points(WIN, odd=odd):
        for x in (0.05, 0.3, 0.7, 0.95):
            lam = canonical_lambda(x)
            v = kernel_at(1, signs, p, lam, UNIT, C, QB)
            u = kernel_phase(1, signs, p, lam, UNIT, C, QB)
            assert abs(u) == pytest.approx(1.0)
            assert abs((v / u).imag) <= 1e-12 * max(abs(v), 1e-300)


def test_kernel_phase_depends_only_on_sign_of_p0():
    lam = canonical_lambda(0.42)
    phases = {kernel_phase(1, PP, LatticePoint(1, k), lam, UNIT, C, QB) for k in (-3, 0, 2, 5)}
    ref = next(iter(phases))
    assert all(abs(u - ref) < 1e-12 for u in phases)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_discrete_points_structural_zeros(n):
    for signs in (PM, MP, MM):
        for p in enumerate_points(WIN) + enumerate_points(WIN, odd=True):
            for j in (1, 2):
                assert kernel(j, signs, p, Discrete(n), UNIT, C, QB) == 0
    values = [kernel(1, PP, p, Discrete(n), UNIT, C, QB) for p in enumerate_points(WIN)]
    assert any(v != 0 for v in values)


def test_discrete_formula_level_pattern():
    """Closed-form values: K^{-+} vanishes identically, K^{+-} is 0 for |p| >= 1 and singular below."""
    for p in enumerate_points(WIN):
        assert kernel(1, MP, p, Discrete(2), UNIT, C, QB, structural=False) == 0
    assert kernel(1, PM, LatticePoint(1, 0), Discrete(2), UNIT, C, QB, structural=False) == 0
    with pytest.raises(DivergentRatio):
        kernel(1, PM, LatticePoint(1, 1), Discrete(2), UNIT, C, QB, structural=False)
    assert kernel(1, MM, LatticePoint(-1, 1), Discrete(2), UNIT, C, QB, structural=False) == 0


def test_kernels_scale_linearly_with_rho():
    p = LatticePoint(1, 2)
    scaled = C.rescaled({p: 3.0})
    assert K(1, PP, p, 0.3, consts=scaled) == pytest.approx(3.0 * K(1, PP, p, 0.3))
    other = LatticePoint(1, 1)
    assert K(1, PP, other, 0.3, consts=scaled) == K(1, PP, other, 0.3)


def test_phase_provider_json_round_trip_and_pinning():
    prov = PhaseProvider().with_branch(2, PM, 1, [0.0, 1.0], [0.1, 0.5])
    again = PhaseProvider.from_json(json.loads(json.dumps(prov.to_json())))
    assert again.angle(2, PM, 1, 0.5) == pytest.approx(0.3)
    assert again.angle(1, PP, 1, 0.5) == 0.0
    with pytest.raises(DomainError):
        prov.with_branch(1, PP, -1, [0.0], [0.2])
    with pytest.raises(DomainError):
        PhaseProvider.from_json({"branches": [{"j": 1, "sigma": "-", "tau": "-", "p0_sign": 1, "angles": [{"x": 0, "theta": 0}]}]})
    with pytest.raises(DomainError):
        PhaseProvider.from_json({"nope": []})


def test_fit_phases_recovers_planted_angles():
    xs_ = np.linspace(0.05, 0.95, 10)
    win = LatticeWindow(-2, 3)
    truth = PhaseProvider().with_branch(2, PP, 1, xs_, 0.4 * xs_).with_branch(1, PM, -1, xs_, -0.2 + 0.1 * xs_)

    def observed(j, signs, sign, x, points):
        return [kernel_at(j, signs, p, canonical_lambda(x), truth, C, QB) for p in points]

    fitted, report = fit_phases(xs_, win, C, QB, observed=observed)
    for x in xs_:
        assert fitted.angle(2, PP, 1, x) == pytest.approx(0.4 * x, abs=1e-10)
        assert fitted.angle(1, PM, -1, x) == pytest.approx(-0.2 + 0.1 * x, abs=1e-10)
    assert max(report.residuals.values()) < 1e-10


def test_fit_phases_needs_enough_points():
    with pytest.raises(DomainError):
        fit_phases([0.1, 0.2], WIN, C, QB)
