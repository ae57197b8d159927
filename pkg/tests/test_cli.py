import json

import numpy as np
import pytest
from click.testing import CliRunner

from kspara import io
from kspara.cli import main
from kspara.experiments import (
    ACCEPTANCE,
    RunConfig,
    linear_fit,
    parse_density,
    product_rule_defect,
    random_mean_free,
    run_all,
    run_counterterm_study,
)
from kspara.spectral_core import Lattice


@pytest.fixture
def runner():
    return CliRunner()


def _ok(runner, args):
    r = runner.invoke(main, args, catch_exceptions=False)
    assert r.exit_code == 0, r.output
    return r


def test_version(runner):
    assert "0.1.0" in _ok(runner, ["--version"]).output


def test_counterterm_two_point_fit(runner, tmp_path):
    out = tmp_path / "ct"
    r = _ok(runner, ["counterterm", "--delta", "1/4", "--delta", "1/8", "--N", "8", "--steps", "4",
                     "--T", "0.1", "--out", str(out)])
    assert "R2=1" in r.output
    head, rows = io.read_csv(out / "counterterm.csv")
    assert len(rows) >= 2 and (out / "counterterm.svg").exists()


def test_constant_sigma_counterterm_vanishes(tmp_path):
    cfg = RunConfig(sigma="const:1", deltas=(0.25, 0.125), N_scale=2, T=0.1, steps=4, out=str(tmp_path))
    res = run_counterterm_study(cfg).results
    assert max(res["norms"]) <= 1e-10 and res["sup_over_grid"] <= 1e-10


def test_config_file_and_override(runner, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N": 4, "steps": 3, "T": 0.01, "rho0": "const:1"}))
    _ok(runner, ["deterministic", "--config", str(cfg), "--N", "6", "--out", str(tmp_path / "o")])
    man = json.loads((tmp_path / "o" / "deterministic_manifest.json").read_text())
    assert man["config"]["N"] == 6 and man["config"]["steps"] == 3
    f = io.read_field(tmp_path / "o" / "rho_deterministic.ksf")
    assert f.lattice.N == 6


def test_unknown_config_key(runner, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    r = runner.invoke(main, ["deterministic", "--config", str(cfg)])
    assert r.exit_code != 0 and "bogus" in r.output


def test_manifest_rerun_is_byte_identical(runner, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["simulate", "--N", "4", "--delta", "0.25", "--steps", "3", "--T", "0.01", "--seed", "7"]
    _ok(runner, [*args, "--out", str(a)])
    _ok(runner, ["simulate", "--config", str(a / "simulate_manifest.json"), "--out", str(b)])
    assert (a / "simulate_norms.csv").read_bytes() == (b / "simulate_norms.csv").read_bytes()
    assert (a / "rho_direct.ksf").read_bytes() == (b / "rho_direct.ksf").read_bytes()


def test_delta_below_resolution_is_rejected(runner, tmp_path):
    r = runner.invoke(main, ["counterterm", "--delta", "1/8", "--N", "4", "--out", str(tmp_path)])
    assert r.exit_code != 0 and "exceeds N" in r.output


def test_besov_enhance_and_verify(runner, tmp_path):
    _ok(runner, ["simulate", "--N", "4", "--delta", "0.25", "--steps", "2", "--T", "0.01", "--mode", "direct",
                 "--out", str(tmp_path / "s")])
    _ok(runner, ["besov", str(tmp_path / "s" / "rho_direct.ksf"), "--alpha", "-1", "--out", str(tmp_path / "b")])
    assert list((tmp_path / "b").glob("*.csv"))
    _ok(runner, ["enhance", "--N", "4", "--delta", "0.25", "--steps", "2", "--T", "0.01", "--samples", "2",
                 "--out", str(tmp_path / "e")])
    head, rows = io.read_csv(tmp_path / "e" / "enhance.csv")
    assert rows
    r = _ok(runner, ["verify-estimates", "--lemma", "summation_estimates", "--max-freq", "16", "--out", str(tmp_path / "v")])
    assert r.output.count("PASS") == 1


def test_product_rule_cases(runner, tmp_path):
    r = _ok(runner, ["product-rule", "--N", "8", "--samples", "3", "--out", str(tmp_path)])
    assert "max relative defect" in r.output
    head, rows = io.read_csv(tmp_path / "product_rule.csv")
    cases = {row[0]: row for row in rows}
    assert float(cases["zero"][2]) == 0.0 and float(cases["zero"][3]) == 0.0
    assert float(cases["sine"][3]) <= 1e-12
    assert len(rows) == 5


def test_product_rule_identity():
    for sd in range(5):
        assert product_rule_defect(random_mean_free(12, sd))[1] <= 1e-12
    u = random_mean_free(4, 0)
    u[4] = 1.0
    with pytest.raises(ValueError):
        product_rule_defect(u)


def test_run_all_selection(runner, tmp_path):
    assert run_all(RunConfig(out=str(tmp_path / "none")), []) == {"results": {}, "summary": []}
    r = runner.invoke(main, ["run-all", "--only", "9", "--out", str(tmp_path / "one")])
    assert r.exit_code == 0 and r.output.startswith("PASS 9")
    made = sorted(p.name for p in (tmp_path / "one").iterdir())
    assert made == ["criterion_9", "summary.csv"]
    assert sorted(p.name for p in (tmp_path / "one" / "criterion_9").iterdir()) == ["identities.csv", "identities_manifest.json"]
    assert set(ACCEPTANCE) == set(range(1, 10))


def test_run_all_records_errors(tmp_path):
    bundle = run_all(RunConfig(out=str(tmp_path)), ["besov"])
    assert bundle["summary"][0][2] == "ERROR"
    assert (tmp_path / "summary.csv").exists()


def test_linear_fit_and_density():
    f = linear_fit([0, 1, 2], [1, 3, 5])
    assert f["slope"] == pytest.approx(2) and f["r2"] == pytest.approx(1) and f["rss"] < 1e-20
    assert linear_fit([1], [1])["slope"] is None
    lat = Lattice(3)
    assert np.allclose(parse_density("const:2", lat), lat.mode((0, 0), 2.0))
    with pytest.raises(ValueError):
        parse_density("nope:1", lat)


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(steps=0).validate(False)
    with pytest.raises(ValueError):
        RunConfig(eps=1.5).validate(False)
    with pytest.raises(ValueError):
        RunConfig(T=0).validate(False)
    d = RunConfig().to_dict()
    assert d["p"] == "inf" and RunConfig.from_dict(d) == RunConfig()
