import csv
import io
import json
import subprocess
import sys

import pytest

from lambdacoal.cli import RunConfig, ConfigError, main
from lambdacoal.measure import beta_measure
from lambdacoal.rates import RateTable


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_rates_csv_round_trip(capsys):
    code, out, _ = run(capsys, "rates", "--alpha", "1.5", "--nmax", "50")
    assert code == 0
    data = rows(out)
    assert list(data[0]) == ["n", "g_n", "E_X1", "row_entropy"]
    assert len(data) == 49
    table = RateTable(beta_measure(1.5), 50)
    for r in data:
        n = int(r["n"])
        assert float(r["g_n"]) == table.g[n]
        assert float(r["E_X1"]) == table.mean_decrement[n]
    assert float(data[1]["E_X1"]) == pytest.approx(1.1, rel=1e-13)


def test_rates_single_row(capsys):
    code, out, _ = run(capsys, "rates", "--row", "3")
    assert code == 0
    data = rows(out)
    assert [float(r["p_nk"]) for r in data] == pytest.approx([0.1, 0.9], abs=1e-14)


def test_moments_csv(capsys, tmp_path):
    path = tmp_path / "m.csv"
    code, _, _ = run(capsys, "moments", "--nmax", "64", "--orders", "3", "--out", str(path))
    assert code == 0
    data = rows(path.read_text())
    assert list(data[0]) == [
        "n", "ET1", "ET1_2", "ET1_3", "ET1T2", "var", "cov", "mse",
        "rescaled_ET1", "rescaled_cov", "rescaled_mse",
    ]
    by_n = {int(r["n"]): r for r in data}
    assert float(by_n[3]["ET1"]) == pytest.approx(0.7, abs=1e-12)
    assert float(by_n[3]["ET1T2"]) == pytest.approx(0.56, abs=1e-12)
    assert all(float(r["mse"]) >= 0 for r in data)


def test_moments_header_without_higher_orders(capsys):
    code, out, _ = run(capsys, "moments", "--nmax", "5", "--orders", "1")
    assert code == 0
    assert out.splitlines()[0] == "n,ET1,ET1T2,var,cov,mse,rescaled_ET1,rescaled_cov,rescaled_mse"


def test_asymptotics_json(capsys):
    code, out, _ = run(capsys, "asymptotics", "--alpha", "1.5")
    assert code == 0
    rep = json.loads(out)
    assert rep["E_T"] == pytest.approx(0.664670194, rel=1e-8)
    assert rep["Var_T"] == pytest.approx(1.32535, rel=1e-5)
    assert rep["C2"] == pytest.approx(-2.0, rel=1e-8)
    assert rep["predictions"]["T4-case3"]["applicable"]
    assert not rep["predictions"]["T4-case1"]["applicable"]
    assert rep["beta_closed_forms"]["Delta_quoted"] == pytest.approx(0.3915231, rel=1e-6)


def test_simulate_is_deterministic(capsys, tmp_path):
    raw = tmp_path / "raw.csv"
    args = ["simulate", "--n", "20", "--replicates", "500", "--seed", "11"]
    code, first, _ = run(capsys, *args, "--raw", str(raw), "--workers", "1")
    assert code == 0
    code, second, _ = run(capsys, *args, "--workers", "4")
    assert first == second
    data = rows(raw.read_text())
    assert list(data[0]) == ["replicate", "L_ext", "L_total", "tau", "T_random_external"]
    assert len(data) == 500
    summary = {r["functional"]: r for r in rows(first)}
    assert float(summary["tau"]["mean"]) > 1


def test_alpha_out_of_range_is_usage_error(capsys):
    code, _, err = run(capsys, "verify", "--alpha", "2.5")
    assert code == 2
    assert "alpha out of (1,2)" in err


def test_unknown_config_key(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_max": 10, "colour": "red"}))
    code, _, err = run(capsys, "rates", "--config", str(cfg))
    assert code == 2
    assert "config.colour" in err


def test_config_field_paths():
    with pytest.raises(ConfigError, match="config.n_max"):
        RunConfig.from_mapping({"n_max": 1})
    with pytest.raises(ConfigError, match="config.tolerances.speed"):
        RunConfig.from_mapping({"tolerances": {"speed": 1}})
    with pytest.raises(ConfigError, match="measure.alpha"):
        RunConfig.from_mapping({"measure": {"kind": "beta"}}).build_measure()


def test_flags_override_config(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"measure": {"kind": "beta", "alpha": 1.2}, "n_max": 4}))
    _, out, _ = run(capsys, "rates", "--config", str(cfg), "--nmax", "3", "--alpha", "1.5")
    data = rows(out)
    assert len(data) == 2
    assert float(data[1]["g_n"]) == pytest.approx(2.5, rel=1e-13)


def test_verify_degenerate_nmax(capsys):
    code, out, _ = run(capsys, "verify", "--nmax", "2", "--only", "AC1,AC2,AC3,AC5")
    assert code == 0
    rep = json.loads(out)
    status = {c["id"]: c for c in rep["criteria"]}
    assert status["AC1"]["status"] == "pass"
    assert status["AC2"]["status"] == "pass"
    assert status["AC3"]["status"] == "refused"
    assert "insufficient points" in status["AC3"]["note"]
    assert status["AC5"]["status"] == "refused"
    assert rep["summary"] == {"pass": 2, "fail": 0, "refused": 2}


def test_verify_failure_exit_code(capsys):
    # the quoted closed form of Delta fails its quadrature comparison
    code, out, _ = run(capsys, "verify", "--only", "AC7")
    assert code == 1
    assert json.loads(out)["criteria"][0]["status"] == "fail"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lambdacoal", "rates", "--nmax", "3"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.splitlines()[0] == "n,g_n,E_X1,row_entropy"
    bad = subprocess.run([sys.executable, "-m", "lambdacoal", "rates", "--bogus"], capture_output=True, text=True)
    assert bad.returncode == 2
