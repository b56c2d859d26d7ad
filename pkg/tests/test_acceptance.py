"""The ten acceptance criteria at desk scale: q = 0.5, k in [-6, 6], 64 nodes, n_max = 4.

Each test records one PASS/FAIL line, shown in the terminal summary.
"""
import time

import numpy as np
import pytest

from qsphere.cli import main
from qsphere.config import RunConfig
from qsphere.lattice import GradedFunction, enumerate_points
from qsphere.suites import build_context, suite_plancherel, suite_product, suite_qseries, suite_symmetry, suite_triviality
from qsphere.transform import KernelTable, forward

CFG = RunConfig()


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


def checks_of(suite):
    return {c["name"]: c for c in suite["checks"]}


@pytest.fixture(scope="module")
def symmetry_run():
    return timed(suite_symmetry, CFG, n_x=32)


@pytest.fixture(scope="module")
def product_run():
    return timed(suite_product, CFG, pairs_per_variant=10)


def test_criterion_1_q_series_identities(criterion):
    suite, secs = timed(suite_qseries, CFG, draws=200, continuation_draws=0)
    c = checks_of(suite)
    worst = max(c[n]["value"] for n in ("q_binomial", "splitting", "index_shift"))
    ok = worst <= 1e-10 and secs < 5
    criterion(1, ok, f"q-binomial/splitting/index-shift worst rel {worst:.2e} (<= 1e-10) over 200 draws in {secs:.2f}s (< 5s)")
    assert ok


def test_criterion_2_continuation_inside_disk(criterion):
    suite, secs = timed(suite_qseries, CFG, draws=0, continuation_draws=100)
    worst = checks_of(suite)["continuation_inside_disk"]["value"]
    ok = worst <= 1e-8 and secs < 5
    criterion(2, ok, f"phi21_continued vs phi_series worst rel {worst:.2e} (<= 1e-8) over 100 draws in {secs:.2f}s (< 5s)")
    assert ok


def test_criterion_3_lower_s_function_at_one(symmetry_run, criterion):
    c = checks_of(symmetry_run[0])
    finite = c["lower_at_one_nonfinite_positive"]["pass"]
    zero = c["lower_at_one_nonzero_negative"]["pass"]
    nans = int(c["sweep_nan_count"]["value"])
    ok = finite and zero and nans == 0
    criterion(3, ok, f"lower S at lambda=1 finite for p>0: {finite}, exactly 0 for p<0: {zero}, NaN count on 64-node sweep: {nans}")
    assert ok


def test_criterion_4_magnitude_symmetry(symmetry_run, criterion):
    suite, secs = symmetry_run
    worst = checks_of(suite)["magnitude_symmetry"]["value"]
    ok = worst <= 1e-8 and secs < 30
    criterion(4, ok, f"magnitude symmetry worst {worst:.2e} x scale (<= 1e-8) over window x 32 x x j in {secs:.1f}s (< 30s)")
    assert ok


def test_criterion_5_discrete_vanishing(criterion):
    suite, _ = timed(suite_triviality, CFG)
    c = checks_of(suite)
    worst = c["discrete_vanishing"]["value"]
    products = c["product_zero_equals_zero_failures"]["value"]
    ok = worst <= 1e-10
    criterion(5, ok, f"non-(+,+) kernels at discrete points n=1..4 worst {worst:.2e} x scale (<= 1e-10); product 0=0 failures {products:g}")
    assert ok


def test_criterion_6_product_held_out(product_run, criterion):
    suite, secs = product_run
    rows = suite["details"]["pairs"]
    counts = {v: sum(r["variant"] == v for r in rows) for v in ("I", "II", "III", "IV")}
    c = checks_of(suite)
    parts = {n: c[f"{n}_failures"] for n in ("heldout_rms_rel", "off_support_ratio", "negative_coefficient")}
    ok = all(p["pass"] for p in parts.values()) and min(counts.values()) >= 10 and secs < 120
    summary = ", ".join(f"{n} {int(p['value'])}/{p['cases']} failing (worst {p['worst_value']:.2e})" for n, p in parts.items())
    criterion(6, ok, f"{summary}; pairs per variant {counts}; {secs:.1f}s (< 120s)")
    assert min(counts.values()) >= 10
    assert secs < 120
    for n, p in parts.items():
        assert p["pass"], f"{n}: {int(p['value'])} of {p['cases']} pairs fail, worst {p['worst_value']:.3e}"


def test_criterion_7_normalization(product_run, criterion):
    rows = [r for r in product_run[0]["details"]["pairs"] if r["variant"] == "I"]
    checks = [next(c for c in r["checks"] if c["name"] == "normalization") for r in rows]
    failing = [(r["p1"], r["p2"], r["normalization"]["deviation"] / r["normalization"]["target"]) for r, c in zip(rows, checks) if not c["pass"]]
    ok = not failing and len(rows) > 0
    worst = max((abs(f[2]) for f in failing), default=0.0)
    criterion(7, ok, f"sum A p0^2 = p1^2 p2^2 within truncation bound: {len(rows) - len(failing)}/{len(rows)} variant-I pairs (worst relative deviation {worst:.2e})")
    assert ok, f"normalization fails for {failing}"


def test_criterion_8_density_fit(criterion):
    suite, secs = timed(suite_plancherel, CFG)
    c = checks_of(suite)
    blocks = suite["details"]["blocks"]
    neg, pos, full = (blocks[k]["gram_opnorm"] for k in ("even_sign-1", "even_sign+1", "full_lattice"))
    nonneg = all(c[k]["pass"] for k in ("negative_density_even_sign-1", "negative_density_even_sign+1"))
    cols = suite["details"]["column_weights"]
    ok = neg <= 1e-3 and pos <= 1e-3 and full <= 5e-3 and nonneg and secs < 120
    criterion(
        8,
        ok,
        f"Gram opnorm deviation p0<0 block {neg:.2e}, p0>0 block {pos:.2e} (<= 1e-3), full lattice {full:.2e} (<= 5e-3, "
        f"{suite['details']['full_lattice_phases']} phases), d >= 0: {nonneg}, {secs:.1f}s (< 120s); "
        f"column-weight diagnostic p0<0 {cols['even_sign-1']['gram_opnorm']:.2e}, p0>0 {cols['even_sign+1']['gram_opnorm']:.2e}",
    )
    assert nonneg and secs < 120
    assert neg <= 1e-3 and pos <= 1e-3, f"block Gram deviations {neg:.3e}, {pos:.3e}"
    assert full <= 5e-3, f"full-lattice Gram deviation {full:.3e}"


def test_criterion_9_grading_preserved(criterion):
    window, grid, ctx = build_context(CFG)
    table = KernelTable(window, grid, ctx)
    even_pts, odd_pts = enumerate_points(window), enumerate_points(window, odd=True)
    bad = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        even = {p: complex(*rng.normal(size=2)) for p in even_pts if rng.random() < 0.6}
        odd = {p: complex(*rng.normal(size=2)) for p in odd_pts if rng.random() < 0.6}
        F_even = forward(GradedFunction(CFG.q, window, even), grid, ctx, table)
        F_odd = forward(GradedFunction(CFG.q, window, {}, odd), grid, ctx, table)
        bad += not (F_even.is_diagonal() and F_odd.is_off_diagonal())
    ok = bad == 0
    criterion(9, ok, f"even -> diagonal only and odd -> off-diagonal only, exactly, on {50 - bad}/50 seeded functions")
    assert ok


def test_criterion_10_verify_is_reproducible(tmp_path, capsys, criterion):
    outs = []
    for name in ("first", "second"):
        path = tmp_path / f"{name}.json"
        main(["verify", "--all", "--out", str(path)])
        outs.append(path.read_bytes())
    capsys.readouterr()
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    criterion(10, ok, f"two `verify --all` reports byte-identical: {ok} ({len(outs[0])} bytes)")
    assert ok
