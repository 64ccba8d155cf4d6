"""Command-line interface: outputs, manifests, exit codes."""
import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from esbrisk import build_worst_case, worst_case_tranche_values
from esbrisk.cli import main


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_price_writes_report_and_manifest(tmp_path):
    out = tmp_path / "price"
    rc = main(["price", "--out", str(out), "--n-paths", "1000",
               "--maturity", "2.0", "--kappa", "0.1,0.3", "--seed", "1"])
    assert rc == 0
    rows = _read_csv(out / "tranche_prices.csv")
    assert [r["kappa"] for r in rows] == ["0.1", "0.3"]
    for r in rows:
        esb, ejb, ell = float(r["esb"]), float(r["ejb"]), float(r["expected_tranche_loss"])
        k = float(r["kappa"])
        assert 0.0 < esb < 1.0 and 0.0 <= ejb < 1.0
        # r = 0: senior value and normalized tranche loss are two views of one number
        assert np.isclose(esb, (1.0 - k) * (1.0 - ell), atol=1e-9)
    m = json.loads((out / "manifest.json").read_text())
    assert m["command"] == "price" and m["config"]["seed"] == 1


def test_worst_case_matches_library(tmp_path):
    out = tmp_path / "wc"
    rc = main(["worst-case", "--out", str(out), "--ellbar", "0.05,0.1",
               "--kappa", "0.2"])
    assert rc == 0
    row = _read_csv(out / "worst_case_bounds.csv")[0]
    dist = build_worst_case(np.array([0.05, 0.1]))
    esb, ejb, ell = worst_case_tranche_values(dist, np.array([0.5, 0.5]), 0.2)
    assert np.isclose(float(row["esb_lower_bound"]), esb, rtol=1e-10)
    assert np.isclose(float(row["ejb_upper_bound"]), ejb, rtol=1e-10)
    assert np.isclose(float(row["tranche_loss"]), ell, rtol=1e-10)


def test_scenario_single_spec(tmp_path):
    out = tmp_path / "sc"
    rc = main(["scenario", "--out", str(out), "--spec", "base",
               "--n-paths", "1000", "--maturity", "2.0", "--kappa", "0.1"])
    assert rc == 0
    rows = _read_csv(out / "scenario_loss_probabilities.csv")
    assert len(rows) == 1 and rows[0]["scenario"] == "base"
    assert 0.0 <= float(rows[0]["loss_probability"]) <= 1.0


def test_risk_report(tmp_path):
    out = tmp_path / "risk"
    rc = main(["risk", "--out", str(out), "--n-paths", "300",
               "--maturity", "2.0", "--kappa", "0.1", "--alpha", "0.9"])
    assert rc == 0
    rows = _read_csv(out / "risk_report.csv")
    assert len(rows) == 1
    assert float(rows[0]["es"]) >= float(rows[0]["var"]) - 1e-12


def test_synth_then_em_pipeline(tmp_path):
    out = tmp_path / "synth"
    rc = main(["synth", "--out", str(out), "--dates", "30", "--seed", "4",
               "--sovereigns", "DEU,ITA"])
    assert rc == 0
    assert (out / "panel.csv").exists()
    states = out / "truth_states.csv"
    assert states.exists()
    out2 = tmp_path / "em"
    rc = main(["em", "--out", str(out2), "--states", str(states),
               "--max-iter", "3"])
    assert rc == 0
    rows = _read_csv(out2 / "params_rw.csv")
    assert {r["sovereign"] for r in rows} == {"DEU", "ITA"}
    assert all(r["measure"] == "real-world" for r in rows)
    probs = _read_csv(out2 / "state_probabilities.csv")
    assert len(probs) == 30


def test_validation_errors_exit_2(tmp_path):
    assert main(["scenario", "--out", str(tmp_path), "--spec", "nope",
                 "--n-paths", "1000"]) == 2
    assert main(["price", "--out", str(tmp_path), "--kappa", "1.5"]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("date,sovereign,maturity_years,spread_bp\n0,AAA,1,-3\n")
    assert main(["calibrate", "--out", str(tmp_path), "--panel", str(bad)]) == 2


def test_console_script_runs(tmp_path):
    res = subprocess.run([sys.executable, "-m", "esbrisk.cli", "worst-case",
                          "--out", str(tmp_path), "--ellbar", "0.02",
                          "--kappa", "0.3"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "worst_case_bounds.csv").exists()
