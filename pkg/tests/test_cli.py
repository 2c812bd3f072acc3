import csv
import io
import json

import numpy as np
import pytest

from crpred.cli import (COMMANDS, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_VERDICT, dumps, main,
                        records_to_csv, run, to_json_value)

QUAD = {"mode": "quadrature"}
EXACT = {"mode": "exact_discrete"}

# one deterministic config per command
CONFIGS = {
    "fisher": {"model": "gaussian_location:n=10", "theta_grid": [0.0, 1.0]},
    "score": {"model": "bernoulli:n=2", "theta_grid": [0.3], "x_points": [[0, 1], [1, 1]], "integration": EXACT},
    "l2diag": {"model": "poisson", "theta_grid": [2.0], "u_grid": [2.0 ** -k for k in range(3, 9)],
               "integration": EXACT},
    "lemma106": {"model": "bernoulli", "theta_grid": [0.5], "u_grid": [2.0 ** -k for k in range(3, 9)],
                 "integration": EXACT},
    "continuity": {"model": "gaussian_location:n=1", "theta0": 0.0, "theta_grid": [0.01, 0.001],
                   "integration": QUAD},
    "bound": {"model": "gaussian_location:n=10", "predictand": "theta",
              "theta_grid": {"from": 0, "to": 1, "count": 3}},
    "qep": {"model": "gaussian_location:n=1", "predictand": "theta", "predictor": "first",
            "theta_grid": [0.5], "integration": QUAD},
    "efficiency": {"model": "bernoulli:n=1", "predictand": "theta", "predictor": "first",
                   "theta_grid": [0.2, 0.7], "integration": EXACT},
    "biased-bound": {"model": "gaussian_location:n=1", "predictand": "theta", "predictor": "shrunk_mean",
                     "theta_grid": [0.0, 1.0], "integration": QUAD},
    "msep": {"model": "ar1_prediction:n=5", "predictor": "plugin", "theta_grid": [0.5],
             "integration": {"mode": "monte_carlo", "n": 5000, "seed": 3}},
    "lemma1": {"model": "gaussian_location", "lemma1": {"instances": 50}, "seed": 1},
    "reconstruct": {"model": "gaussian_location:n=1", "predictand": "theta", "theta0": 0.0, "theta_grid": [1.0],
                    "x_points": [[-1.0], [2.0]], "path": {"n_steps": 40}, "integration": QUAD},
    "check-assumptions": {"model": "gaussian_location:n=1", "predictand": "theta", "predictor": "first",
                          "theta0": 0.0, "theta_grid": [-0.5, 0.5], "integration": QUAD},
}


def test_every_command_has_a_config():
    assert set(CONFIGS) == set(COMMANDS)


@pytest.mark.parametrize("command", COMMANDS)
def test_command_runs_and_is_byte_deterministic(command):
    a, code = run(command, CONFIGS[command])
    b, _ = run(command, CONFIGS[command])
    assert code == EXIT_OK, a.get("error")
    assert a["passes"] in (True, None)
    assert dumps(a) == dumps(b)
    # the echoed config reproduces the report
    c, _ = run(command, a["config"])
    assert dumps(c) == dumps(a)


def test_bound_records():
    report, code = run("bound", CONFIGS["bound"])
    assert code == EXIT_OK and len(report["records"]) == 3
    for rec, theta in zip(report["records"], (0.0, 0.5, 1.0)):
        assert rec["theta"] == {"shape": [1], "values": [theta]}
        assert rec["bound"]["shape"] == [1, 1]
        assert rec["bound"]["values"][0] == pytest.approx(0.1, abs=1e-6)


def test_reconstruct_record():
    rec = run("reconstruct", CONFIGS["reconstruct"])[0]["records"][0]
    assert rec["A"]["values"][0] == pytest.approx(1.0, abs=1e-6)
    assert rec["B"]["values"] == pytest.approx([0.5, 0.5], abs=1e-6)


@pytest.mark.parametrize("cfg", [
    {"model": "gaussian_location", "theta_grid": {"from": 0, "to": 1, "count": 0}},
    {"model": "gaussian_location", "theta_grid": [0.0], "colour": "red"},
    {"theta_grid": [0.0]},
    {"model": "nosuch", "theta_grid": [0.0]},
    {"model": "gaussian_location", "theta_grid": [0.0], "integration": {"mode": "simpson"}},
    {"model": "bernoulli", "theta_grid": [1.5]},
])
def test_config_errors_exit_2(cfg, tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["fisher", "--config", str(path)]) == EXIT_CONFIG


def test_verdict_and_numerical_exit_codes():
    report, code = run("l2diag", {"model": "uniform_scale", "theta_grid": [1.0], "u_grid": [0.1, 0.05, 0.02,
                                                                                          0.01, 0.005]})
    assert code == EXIT_VERDICT and report["error"]["type"] == "AbsoluteContinuityError"
    assert "theta=[1.0]" in report["error"]["message"]
    # a one-sd quadrature box misses most of the mass
    report, code = run("qep", dict(CONFIGS["qep"], integration={"mode": "quadrature", "width": 1.0}))
    assert code == EXIT_NUMERICAL and report["error"]["type"] == "CoverageError"


def test_csv_matches_json(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(CONFIGS["efficiency"]))
    out, table = tmp_path / "r.json", tmp_path / "r.csv"
    assert main(["efficiency", "--config", str(cfg), "--out", str(out), "--csv", str(table)]) == EXIT_OK
    report = json.loads(out.read_text())
    rows = list(csv.DictReader(io.StringIO(table.read_text())))
    assert len(rows) == len(report["records"])
    for row, rec in zip(rows, report["records"]):
        assert float(row["qep[0,0]"]) == rec["qep"]["values"][0]
        assert float(row["equality_residual"]) == rec["equality_residual"]
    assert records_to_csv(report["records"]) == table.read_text()


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = {"model": "gaussian_location:n=1", "theta_grid": [0.0], "predictand": "theta", "predictor": "first",
           "integration": {"mode": "monte_carlo", "n": 1000, "seed": 5}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))

    def qep_with(*extra):
        out = tmp_path / "out.json"
        assert main(["qep", "--config", str(path), "--out", str(out), *extra]) == EXIT_OK
        rep = json.loads(out.read_text())
        return rep["config"]["seed"], rep["records"][0]["qep"]["values"][0]

    assert qep_with()[0] == 5
    monkeypatch.setenv("CRPRED_SEED", "7")
    env_seed, env_val = qep_with()
    flag_seed, flag_val = qep_with("--seed", "9")
    assert env_seed == 7 and flag_seed == 9 and env_val != flag_val
    monkeypatch.delenv("CRPRED_SEED")
    assert qep_with("--seed", "7")[1] == env_val


def test_workers_do_not_change_report():
    cfg = dict(CONFIGS["bound"], theta_grid={"from": 0, "to": 2, "count": 6})
    one, _ = run("bound", cfg)
    many, _ = run("bound", dict(cfg, workers=3))
    assert one["records"] == many["records"]


def test_non_finite_values_serialize_as_strings():
    v = to_json_value({"m": np.array([[1.0, np.nan], [np.inf, -np.inf]]), "c": float("inf")})
    assert v == {"m": {"shape": [2, 2], "values": [1.0, "nan", "inf", "-inf"]}, "c": "inf"}
    text = dumps({"records": [v]})
    assert json.loads(text)["records"][0] == v and "NaN" not in text


def test_stdout_output(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIGS["fisher"]))
    assert main(["fisher", "--config", str(path)]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["command"] == "fisher" and rep["records"][0]["fisher"]["values"][0] == pytest.approx(10, abs=1e-6)
