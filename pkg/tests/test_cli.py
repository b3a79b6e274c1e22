import csv
import io
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from gicredit.cli import main, parse_scenario, ScenarioError
from gicredit.numerics import norm_cdf

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def write(tmp_path, obj, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(path)


def run(tmp_path, command, scenario, *extra):
    out = tmp_path / f"out_{command}"
    code = main([command, "--scenario", scenario, "--out", str(out), *extra])
    return code, out


def read_csv(path):
    return list(csv.DictReader(io.StringIO(Path(path).read_text())))


MERTON = {
    "model": "merton",
    "params": {"K": -0.2, "U": 1.0, "r": 0.0, "T_star": 2.0},
    "state": {"w": 0.0},
    "t": 0.0,
    "maturities": [0.5, 0.999, 1.0, 1.5],
    "sim": {"n_paths": 20000, "dt": 0.25, "seed": 7, "horizon": 2.0, "block_size": 8192},
    "outputs": ["prices", "estimates", "martingale"],
}


class TestValidation:
    def test_malformed_json(self, tmp_path, capsys):
        code, _ = run(tmp_path, "price", write(tmp_path, "{not json"))
        assert code == 2
        assert "malformed JSON" in json.loads(capsys.readouterr().err)["errors"][0]

    def test_missing_file(self, tmp_path):
        assert run(tmp_path, "price", str(tmp_path / "nope.json"))[0] == 2

    def test_invalid_params_listed(self, tmp_path, capsys):
        bad = dict(MERTON, params={"K": 0.0, "U": -1.0}, outputs=["plots"])
        code, _ = run(tmp_path, "price", write(tmp_path, bad))
        errors = json.loads(capsys.readouterr().err)["errors"]
        assert code == 2 and len(errors) == 2

    def test_unknown_model(self):
        with pytest.raises(ScenarioError):
            parse_scenario({"model": "vasicek"})

    def test_measure_must_match_model(self):
        with pytest.raises(ScenarioError):
            parse_scenario(dict(MERTON, measure={"atoms": [[0.5, 1.0]]}))

    def test_sim_validation(self):
        with pytest.raises(ScenarioError):
            parse_scenario(dict(MERTON, sim={"n_paths": 10, "dt": 0.1, "seed": 1, "horizon": 2.0}))


class TestPrice:
    def test_merton_drop_at_U(self, tmp_path):
        code, out = run(tmp_path, "price", write(tmp_path, MERTON))
        assert code == 0
        rows = {float(r["T"]): float(r["price"]) for r in read_csv(out / "prices.csv")}
        assert rows[0.5] == 1.0 and rows[0.999] == 1.0
        assert rows[1.0] == pytest.approx(norm_cdf(0.2), rel=1e-14)

    def test_post_default_all_zero(self, tmp_path):
        sc = dict(MERTON, state={"w": 0.0, "tau": 0.3}, t=0.5, maturities=[0.6, 1.5])
        _, out = run(tmp_path, "price", write(tmp_path, sc))
        assert [float(r["price"]) for r in read_csv(out / "prices.csv")] == [0.0, 0.0]

    def test_zero_risk_is_discount_curve(self, tmp_path):
        sc = {"model": "custom_curve", "params": {"r": 0.03}, "maturities": [0.5, 2.0], "outputs": ["prices"]}
        _, out = run(tmp_path, "price", write(tmp_path, sc))
        prices = [float(r["price"]) for r in read_csv(out / "prices.csv")]
        assert prices == pytest.approx([math.exp(-0.015), math.exp(-0.06)], rel=1e-12)

    def test_stdout_when_no_out_dir(self, tmp_path, capsys):
        assert main(["price", "--scenario", write(tmp_path, MERTON)]) == 0
        assert capsys.readouterr().out.startswith("T,price,regime\n")


class TestAudit:
    def test_compliant_scenarios(self, tmp_path):
        for name in ("merton.json", "cir_affine.json", "atom_default.json"):
            code, out = run(tmp_path, "audit", str(SCENARIOS / name))
            report = json.loads((out / "audit.json").read_text())
            assert code == 0 and report["certified"], name

    def test_tampered_custom_curve(self, tmp_path):
        code, out = run(tmp_path, "audit", str(SCENARIOS / "custom_tampered.json"))
        report = json.loads((out / "audit.json").read_text())
        assert code == 1
        assert report["max_atom_residual"] == 0.5

    def test_blackcox_unsupported(self, tmp_path, capsys):
        code, _ = run(tmp_path, "audit", str(SCENARIOS / "blackcox.json"))
        assert code == 3
        assert "simulate" in capsys.readouterr().err

    def test_riccati_unsupported_for_merton(self, tmp_path):
        assert run(tmp_path, "riccati", write(tmp_path, MERTON))[0] == 3


class TestSimulate:
    def test_merton_summary(self, tmp_path):
        code, out = run(tmp_path, "simulate", write(tmp_path, MERTON))
        summary = json.loads((out / "simulate.json").read_text())
        assert code == 0
        assert all(c["within_3se"] for c in summary["comparisons"])
        assert summary["martingale"]["verdict"] == "PASS"
        assert read_csv(out / "estimates.csv")[0]["config_hash"] == summary["config_hash"]

    def test_atom_default_scenario(self, tmp_path):
        sc = json.loads((SCENARIOS / "atom_default.json").read_text())
        sc["sim"]["n_paths"] = 100_000
        _, out = run(tmp_path, "simulate", write(tmp_path, sc))
        comp = json.loads((out / "simulate.json").read_text())["comparisons"][0]
        assert comp["estimator"] == "atom_default(u=1.0)"
        assert comp["closed_form"] == pytest.approx(1 - math.exp(-0.5), abs=1e-15)
        assert comp["within_3se"]

    def test_blackcox_table(self, tmp_path):
        sc = json.loads((SCENARIOS / "blackcox.json").read_text())
        sc["sim"]["n_paths"] = 20_000
        _, out = run(tmp_path, "simulate", write(tmp_path, sc))
        comps = json.loads((out / "simulate.json").read_text())["comparisons"]
        assert len(comps) == 4 and all(c["within_3se"] for c in comps)

    def test_missing_sim_block(self, tmp_path):
        assert run(tmp_path, "simulate", str(SCENARIOS / "custom_tampered.json"))[0] == 2


class TestRiccati:
    def _rows(self, tmp_path, psi1):
        sc = json.loads((SCENARIOS / "cir_affine.json").read_text())
        sc["params"]["psi1"] = psi1
        sc["maturities"] = [2.0]
        _, out = run(tmp_path, "riccati", write(tmp_path, sc, f"r{psi1}.json"))
        return read_csv(out / "riccati.csv"), json.loads((out / "riccati.json").read_text())

    def test_jump_at_atom(self, tmp_path):
        rows, summary = self._rows(tmp_path, 0.4)
        at = [r for r in rows if float(r["t"]) == 1.0]
        assert [r["is_pre_atom_limit"] for r in at] == ["1", "0"]
        assert float(at[1]["B_1"]) - float(at[0]["B_1"]) == pytest.approx(-0.4, abs=1e-15)
        assert summary["max_abs_diff_closed_form"] <= 1e-6

    def test_no_atom_risk_is_continuous(self, tmp_path):
        rows, _ = self._rows(tmp_path, 0.0)
        at = [r for r in rows if float(r["t"]) == 1.0]
        assert at[0]["B_1"] == at[1]["B_1"] and at[0]["A"] == at[1]["A"]


def test_reruns_are_byte_identical(tmp_path):
    path = write(tmp_path, MERTON)
    for command in ("price", "simulate"):
        a = tmp_path / f"a_{command}"
        b = tmp_path / f"b_{command}"
        main([command, "--scenario", path, "--out", str(a)])
        main([command, "--scenario", path, "--out", str(b)])
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "gicredit", "price", "--scenario", write(tmp_path, MERTON)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and proc.stdout.startswith("T,price,regime")
