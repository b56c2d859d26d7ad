import csv
import io
import json

import pytest

from qsphere.cli import main
from qsphere.config import DEFAULT_TOLERANCES, ENV_VAR, RunConfig, config_from_env, load_config_file
from qsphere.errors import DomainError


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_run_config_defaults_and_validation():
    cfg = RunConfig()
    assert (cfg.q, cfg.k_min, cfg.k_max, cfg.nodes, cfg.n_max) == (0.5, -6, 6, 64, 4)
    assert cfg.tol("heldout") == DEFAULT_TOLERANCES["heldout"]
    assert cfg.with_tolerances({"heldout": 1e-3}).tol("heldout") == 1e-3
    with pytest.raises(DomainError):
        RunConfig(q=1.0)
    with pytest.raises(DomainError):
        RunConfig(k_min=3, k_max=2)
    with pytest.raises(DomainError):
        cfg.with_tolerances({"made_up": 1.0})
    with pytest.raises(DomainError):
        cfg.with_tolerances({"heldout": 0.0})


def test_run_config_json_round_trip():
    cfg = RunConfig(q=0.4, k_min=-3, nodes=16, seed=9).with_tolerances({"symmetry": 1e-9})
    assert RunConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg
    with pytest.raises(DomainError):
        RunConfig.from_json({"bogus": 1})


def test_config_files(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text('q = 0.3\nseed = 4\n[window]\nk_min = -2\nk_max = 2\n[tolerances]\nheldout = 1e-3\n')
    cfg = load_config_file(toml)
    assert (cfg.q, cfg.seed, cfg.k_min, cfg.k_max, cfg.tol("heldout")) == (0.3, 4, -2, 2, 1e-3)
    js = tmp_path / "run.json"
    js.write_text(json.dumps({"grid": {"nodes": 8, "n_max": 2}}))
    assert load_config_file(js).nodes == 8
    assert config_from_env({ENV_VAR: str(js)}).n_max == 2
    assert config_from_env({}) == RunConfig()
    bad = tmp_path / "bad.toml"
    bad.write_text("q = = 1")
    with pytest.raises(DomainError):
        load_config_file(bad)


def test_flags_override_the_environment(tmp_path, monkeypatch, capsys):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"q": 0.3, "grid": {"nodes": 8, "n_max": 2}}))
    monkeypatch.setenv(ENV_VAR, str(path))
    code, out, _ = run(capsys, "kernel", "--p0", "-q^1", "--x", "0.5", "--q", "0.6")
    assert code == 0
    report = json.loads(out)
    assert report["config"]["q"] == 0.6
    assert report["config"]["grid"]["nodes"] == 8


def test_kernel_single_value(capsys):
    code, out, _ = run(capsys, "kernel", "--p0", "-q^1", "--x", "0.6", "--signs", "++")
    assert code == 0
    rows = json.loads(out)["rows"]
    assert len(rows) == 1 and rows[0]["p0"] == "-q^1" and rows[0]["abs"] > 0


def test_kernel_at_discrete_point_for_a_minus_sign_is_zero(capsys):
    code, out, _ = run(capsys, "kernel", "--p0", "q^2", "--discrete-n", "1", "--signs", "+-")
    assert code == 0
    row = json.loads(out)["rows"][0]
    assert row["re"] == 0 and row["im"] == 0


def test_kernel_sweep_is_csv(capsys):
    code, out, _ = run(capsys, "kernel", "--p0", "q^0", "--sweep", "x", "--nodes", "8")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 8 and {r["series"] for r in rows} == {"principal"}


def test_negative_branch_with_k0_is_a_domain_error(capsys):
    code, _, err = run(capsys, "kernel", "--p0", "-q^0", "--x", "0.5")
    assert code == 2
    payload = json.loads(err)
    assert payload["error"] == "DomainError"
    assert "negative branch requires k ≥ 1" in payload["message"]


def test_usage_errors_are_structured(capsys):
    code, _, err = run(capsys, "kernel")
    assert code == 2
    assert json.loads(err)["error"] == "UsageError"


def test_forward_of_an_even_delta_is_diagonal(capsys):
    code, out, _ = run(capsys, "transform", "forward", "--example", "even_delta", "--nodes", "8")
    assert code == 0
    report = json.loads(out)
    assert report["summary"]["diagonal_only"] is True


def test_inverse_on_another_grid(tmp_path, capsys):
    field = tmp_path / "field.json"
    code, _, _ = run(capsys, "transform", "forward", "--example", "even_delta", "--nodes", "8", "--out", str(field))
    assert code == 0 and field.exists()
    code, _, err = run(capsys, "transform", "inverse", "--input", str(field), "--nodes", "12")
    assert code == 2
    assert json.loads(err)["error"] == "GridMismatch"


def test_missing_input_file(capsys):
    code, _, err = run(capsys, "transform", "forward", "--input", "/nonexistent/f.json")
    assert code == 2
    assert "cannot read" in json.loads(err)["message"]


def test_point_flags_accept_a_leading_minus(capsys):
    code, out, _ = run(capsys, "verify", "product", "--variant", "I", "--p1", "q^1", "--p2", "-q", "--kmin", "-3", "--kmax", "3", "--nodes", "16")
    report = json.loads(out)
    rows = report["suites"][0]["details"]["pairs"]
    assert [(r["p1"], r["p2"]) for r in rows] == [("+q^1", "-q^1")]
    assert code in (0, 1)


def test_verify_needs_a_target(capsys):
    code, _, err = run(capsys, "verify")
    assert code == 2
    code, _, _ = run(capsys, "verify", "qseries", "--all")
    assert code == 2


def test_verify_is_deterministic(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.json"
        code, _, _ = run(capsys, "verify", "symmetry", "--kmin", "-3", "--kmax", "3", "--nodes", "16", "--out", str(path))
        assert code == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_verify_csv(capsys):
    code, out, _ = run(capsys, "verify", "triviality", "--kmin", "-3", "--kmax", "3", "--nodes", "16", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows and {r["suite"] for r in rows} == {"triviality"}
    assert code == (0 if all(r["pass"] == "True" for r in rows) else 1)
