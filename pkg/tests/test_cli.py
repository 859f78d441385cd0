import csv
import json
import os

import numpy as np
import pytest

import corrmat.cli as cli
from corrmat.montecarlo import RECORD_COLUMNS
from corrmat.sampler import read_sample_dump

WIGNER = {"type": "wigner", "eta2": 1.0}
MA2 = {"type": "ma", "coeffs": [[0, 0, 1.0], [1, 0, 1.0]]}
DEGENERATE = {"type": "ma", "coeffs": [[0, 0, 1.0], [1, 0, -1.0]]}
INDEFINITE = {"type": "explicit", "coeffs": [[0, 0, 1.0], [1, 0, 0.8], [-1, 0, 0.8]]}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def small_config(**extra):
    cfg = {"theta": 1.0, "kernel": MA2, "sizes": [6, 12], "replications": 4, "seed": 7}
    cfg.update(extra)
    return cfg


# --- predict -----------------------------------------------------------------

def test_predict_wigner(tmp_path, capsys):
    k = write_json(tmp_path / "k.json", WIGNER)
    code, out, _ = run_cli(capsys, "predict", k, "--theta", 1, "--n", 100)
    assert code == 0
    res = json.loads(out)
    assert res["center"] == 200 and res["alpha"] == 0.5 and res["sigma2"] == 2
    assert res["degenerate"] is False
    assert res["exact_var_quad"] == pytest.approx(2 * 100**2)
    assert set(res) == {"center", "alpha", "sigma2", "degenerate", "exact_var_quad",
                        "exact_mean_w2"}


def test_predict_degenerate(tmp_path, capsys):
    k = write_json(tmp_path / "k.json", DEGENERATE)
    code, out, _ = run_cli(capsys, "predict", k, "--theta", 1, "--n", 50)
    res = json.loads(out)
    assert code == 0 and res["sigma2"] == 0 and res["degenerate"] is True


def test_predict_bad_theta(tmp_path, capsys):
    k = write_json(tmp_path / "k.json", WIGNER)
    assert run_cli(capsys, "predict", k, "--theta", 0, "--n", 10)[0] == 3
    assert run_cli(capsys, "predict", k, "--theta", -1, "--n", 10)[0] == 3


def test_predict_bad_kernel(tmp_path, capsys):
    k = write_json(tmp_path / "k.json", {"type": "explicit", "coeffs": [[1, 0, 1.0]]})
    assert run_cli(capsys, "predict", k, "--theta", 1, "--n", 10)[0] == 2
    assert run_cli(capsys, "predict", tmp_path / "nope.json", "--theta", 1, "--n", 10)[0] == 2


def test_bad_arguments(capsys):
    assert run_cli(capsys, "predict")[0] == 2
    assert run_cli(capsys, "frobnicate")[0] == 2


# --- validate-kernel ---------------------------------------------------------

def test_validate_ma(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "validate-kernel", write_json(tmp_path / "k.json", MA2))
    assert code == 0 and json.loads(out)["valid"] is True


def test_validate_indefinite(tmp_path, capsys):
    k = write_json(tmp_path / "k.json", INDEFINITE)
    code, out, _ = run_cli(capsys, "validate-kernel", k, "--embed-size", 16)
    rep = json.loads(out)
    assert code == 4 and rep["valid"] is False
    assert rep["min_spectral"] == pytest.approx(1 - 1.6, abs=1e-12)


def test_validate_missing_file(tmp_path, capsys):
    assert run_cli(capsys, "validate-kernel", tmp_path / "missing.json")[0] == 2


def test_validate_bad_embed_size(tmp_path, capsys):
    k = write_json(tmp_path / "k.json", MA2)
    assert run_cli(capsys, "validate-kernel", k, "--embed-size", 12)[0] == 2


# --- config parsing ----------------------------------------------------------

def test_defaults_materialized():
    _, echoed = cli.parse_config({"theta": 1, "kernel": WIGNER, "sizes": [3], "replications": 2})
    assert echoed["seed"] == 0 and echoed["sampler"] == "ma"
    assert echoed["eig_tol"] == 1e-10 and echoed["level"] == 0.005
    _, echoed = cli.parse_config({"theta": 1, "kernel": INDEFINITE, "sizes": [3],
                                  "replications": 2})
    assert echoed["sampler"] == "circulant"


def test_unknown_key_named():
    with pytest.raises(cli.ConfigError, match="replicatoins"):
        cli.parse_config({**small_config(), "replicatoins": 3})


@pytest.mark.parametrize("patch", [
    {"replications": 1},
    {"replications": 2.5},
    {"sizes": []},
    {"sizes": "10"},
    {"theta": "1"},
    {"theta": 0},
    {"kernel": {"type": "ar1"}},
    {"sampler": "cholesky", "sizes": [100]},
])
def test_bad_configs(patch):
    with pytest.raises(cli.ConfigError):
        cli.parse_config(small_config(**patch))


def test_missing_key():
    cfg = small_config()
    del cfg["sizes"]
    with pytest.raises(cli.ConfigError, match="sizes"):
        cli.parse_config(cfg)


# --- run / report ------------------------------------------------------------

def test_run_rejects_single_replication(tmp_path, capsys):
    c = write_json(tmp_path / "c.json", small_config(replications=1))
    code, _, err = run_cli(capsys, "run", c, "--out", tmp_path / "out")
    assert code == 2 and ("replications" in err or "M >= 2" in err)
    assert not (tmp_path / "out").exists()


def test_run_unknown_key_exit(tmp_path, capsys):
    c = write_json(tmp_path / "c.json", {**small_config(), "bogus": 1})
    code, _, err = run_cli(capsys, "run", c, "--out", tmp_path / "out")
    assert code == 2 and "bogus" in err


def test_run_outputs_and_rerun_identical(tmp_path, capsys):
    c = write_json(tmp_path / "c.json", small_config())
    code1, _, _ = run_cli(capsys, "run", c, "--out", tmp_path / "a")
    code2, _, _ = run_cli(capsys, "run", c, "--out", tmp_path / "b")
    assert code1 == code2 and code1 in (0, 5)
    for name in ("records.csv", "summary.json", "qq.csv", "op_norm_quantiles.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "records.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == RECORD_COLUMNS
    assert len(rows) == 1 + 2 * 4
    assert [int(r[0]) for r in rows[1:]] == [6] * 4 + [12] * 4
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["config"]["seed"] == 7 and summary["config"]["sampler"] == "ma"
    assert not [p for p in (tmp_path / "a").iterdir() if p.name.endswith(".tmp")]


def test_csv_round_trip_lossless(tmp_path, capsys):
    c = write_json(tmp_path / "c.json", small_config())
    run_cli(capsys, "run", c, "--out", tmp_path / "a")
    back = cli.read_records_csv(tmp_path / "a" / "records.csv")
    assert cli.records_csv(back) == (tmp_path / "a" / "records.csv").read_text()


def test_report_recomputes_summary(tmp_path, capsys):
    c = write_json(tmp_path / "c.json", small_config())
    run_code, _, _ = run_cli(capsys, "run", c, "--out", tmp_path / "a")
    code, _, _ = run_cli(capsys, "report", c, tmp_path / "a" / "records.csv",
                         "--out", tmp_path / "r")
    assert code == run_code
    assert (tmp_path / "r" / "summary.json").read_bytes() == \
        (tmp_path / "a" / "summary.json").read_bytes()
    code, out, _ = run_cli(capsys, "report", c, tmp_path / "a" / "records.csv")
    assert json.loads(out)["config"]["sizes"] == [6, 12]


def test_report_bad_csv(tmp_path, capsys):
    c = write_json(tmp_path / "c.json", small_config())
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run_cli(capsys, "report", c, bad)[0] == 2


def test_run_exit_codes_reflect_verdicts(tmp_path, capsys, monkeypatch):
    c = write_json(tmp_path / "c.json", small_config())
    real = cli.run_experiment

    def failing(config):
        records, summary = real(config)
        return records, {**summary, "passed": False}

    monkeypatch.setattr(cli, "run_experiment", failing)
    assert run_cli(capsys, "run", c, "--out", tmp_path / "o")[0] == 5


def test_run_solver_budget_exit(tmp_path, capsys, monkeypatch):
    c = write_json(tmp_path / "c.json", small_config())

    def boom(config):
        raise cli.FailureBudgetExceeded("too many failures", [])

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert run_cli(capsys, "run", c, "--out", tmp_path / "o")[0] == 6


# --- sample ------------------------------------------------------------------

@pytest.mark.parametrize("sampler", ["ma", "cholesky", "circulant"])
def test_sample_dump(tmp_path, capsys, sampler):
    c = write_json(tmp_path / "c.json", small_config())
    out = tmp_path / "s.txt"
    code, _, _ = run_cli(capsys, "sample", c, "--n", 5, "--rep", 2, "--sampler", sampler,
                         "--out", out)
    assert code == 0
    s = read_sample_dump(open(out))
    assert s.values.shape == (5, 5) and s.theta == 1.0
    code, stdout, _ = run_cli(capsys, "sample", c, "--n", 5, "--rep", 2, "--sampler", sampler)
    assert stdout == out.read_text()


# --- atomic writes -----------------------------------------------------------

def test_atomic_write_interrupted(tmp_path, monkeypatch):
    target = tmp_path / "records.csv"
    target.write_text("old\n")

    def broken_replace(src, dst):
        raise KeyboardInterrupt

    monkeypatch.setattr(os, "replace", broken_replace)
    with pytest.raises(KeyboardInterrupt):
        cli.write_atomic(target, "new\n" * 1000)
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["records.csv"]


def test_atomic_write_fresh(tmp_path):
    target = tmp_path / "x.csv"
    cli.write_atomic(target, "a,b\n")
    assert target.read_text() == "a,b\n"


def test_json_nan_becomes_null():
    assert json.loads(cli._json({"x": float("nan"), "y": [np.inf, 1.0]})) == {"x": None,
                                                                              "y": [None, 1.0]}
