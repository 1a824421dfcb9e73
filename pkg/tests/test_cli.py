import json

import numpy as np
import pytest
import yaml

from jointclust import io
from jointclust.cli import main
from jointclust.simulation import MIXED_PMFS


def _config(tmp_path, doc, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


@pytest.fixture(scope="module")
def case1(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--case", "case1", "--n", "500", "--seed", "3", "--out", str(d)]) == 0
    return d / "case1_n500_rep000.csv"


def test_simulate_writes_csv_and_sidecar(case1):
    lines = case1.read_text().splitlines()
    assert len(lines) == 501
    io.read_schema(io.sidecar_path(case1))


def test_simulate_is_deterministic(tmp_path, case1):
    assert main(["simulate", "--case", "case1", "--n", "500", "--seed", "3", "--out", str(tmp_path)]) == 0
    assert (tmp_path / case1.name).read_bytes() == case1.read_bytes()


def test_fit_one_class(tmp_path, case1):
    assert main(["fit", "--data", case1, "--K", "1", "--out", tmp_path]) == 0
    doc = io.read_artifact(tmp_path / "fit.json")
    assert doc["K"] == 1 and doc["params"]["pi"] == [1.0]


@pytest.mark.parametrize("method", ["simultaneous-parametric", "simultaneous-semiparametric",
                                    "two-step-parametric", "two-step-semiparametric"])
def test_fit_artifact_and_reproducibility(tmp_path, case1, method):
    cfg = _config(tmp_path, {"fit": {"data": str(case1), "K": 2, "loss": "quadratic", "method": method,
                                     "n_starts": 1, "max_iter": 50}})
    assert main(["fit", "--config", cfg, "--seed", "11", "--out", tmp_path / "a"]) == 0
    doc = io.read_artifact(tmp_path / "a" / "fit.json")
    assert doc["method"] == method
    assert doc["params"]["delta"] == sorted(doc["params"]["delta"])
    assert 0 < doc["evaluation"]["test_mse"] < 10
    assert doc["evaluation"]["n_test"] == 165
    assert main(["fit", "--config", cfg, "--seed", str(doc["seed"]), "--out", tmp_path / "b"]) == 0
    assert (tmp_path / "a" / "fit.json").read_bytes() == (tmp_path / "b" / "fit.json").read_bytes()
    assert (tmp_path / "a" / "coefficients.csv").read_bytes() == (tmp_path / "b" / "coefficients.csv").read_bytes()


def test_experiment_tables(tmp_path):
    cfg = _config(tmp_path, {"experiment": "mini", "cases": ["case1"], "n": [200], "replications": 2,
                             "losses": ["quadratic"], "seed": 5, "out": "out",
                             "em": {"n_starts": 2}, "mm": {"n_starts": 1, "max_iter": 40}})
    assert main(["experiment", "--config", cfg]) == 0
    out = tmp_path / "out"
    rows = io.read_rows(out / "mini_replications.csv")
    methods = {r["method"] for r in rows}
    assert len(methods) == 4
    for m in methods:
        assert sum(r["method"] == m for r in rows) == 2
    agg = io.read_rows(out / "mini_aggregate.csv")
    for a in agg:
        mine = [r["beta_mse"] for r in rows if r["method"] == a["method"] and r["status"] == "ok"]
        assert a["median_beta_mse"] == pytest.approx(float(np.median(mine)), rel=1e-12)
        assert a["n_ok"] + a["n_failed"] == 2
    assert (out / "mini_case1_quadratic_boxplots.png").stat().st_size > 0
    first = (out / "mini_replications.csv").read_bytes()
    assert main(["experiment", "--config", cfg, "--jobs", "2", "--out", tmp_path / "again"]) == 0
    assert (tmp_path / "again" / "mini_replications.csv").read_bytes() == first


def test_select_k_table(tmp_path, case1):
    cfg = _config(tmp_path, {"select-k": {"data": str(case1), "k_range": {"min": 1, "max": 3},
                                          "losses": ["quadratic"], "n_starts": 1, "max_iter": 30,
                                          "n_folds": 3}})
    assert main(["select-k", "--config", cfg, "--out", tmp_path]) == 0
    rows = io.read_rows(tmp_path / "select_k.csv")
    assert [r["K"] for r in rows] == [1.0, 2.0, 3.0]
    assert sum(r["elbow"] == "true" for r in rows) == 1
    assert (tmp_path / "select_k.png").exists()


def test_profile_classes_on_mixed_data(tmp_path):
    assert main(["simulate", "--case", "mixed", "--n", "2000", "--seed", "1", "--out", tmp_path]) == 0
    data = tmp_path / "mixed_n2000_rep000.csv"
    cfg = _config(tmp_path, {"fit": {"data": str(data), "K": 3, "n_starts": 1, "max_iter": 80,
                                     "test_fraction": 0}})
    assert main(["fit", "--config", cfg, "--out", tmp_path / "fit"]) == 0
    assert main(["profile-classes", "--fit", tmp_path / "fit" / "fit.json", "--data", data,
                 "--out", tmp_path / "prof"]) == 0
    prof = json.loads((tmp_path / "prof" / "profiles.json").read_text())
    cats = [c for c in prof["columns"] if c["type"] == "categorical"]
    for c, true in zip(cats, MIXED_PMFS):
        probs = np.array(c["probs"])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        # classes are emitted by ascending delta, which matches the generator's order
        np.testing.assert_allclose(probs, np.array(true), atol=0.05)
        table = io.read_rows(tmp_path / "prof" / f"profile_{c['name']}.csv")
        assert len(table[0]) == 2 + len(c["levels"])
    assert (tmp_path / "prof" / "profiles.png").exists()
    classes = io.read_rows(tmp_path / "prof" / "profile_classes.csv")
    assert sum(r["n_assigned"] for r in classes) == 2000


def test_exit_codes(tmp_path, case1, capsys):
    assert main([]) == 1
    assert main(["fit", "--bogus"]) == 1
    assert main(["fit", "--data", case1, "--out", tmp_path]) == 1  # K missing
    assert main(["fit", "--data", tmp_path / "missing.csv", "--K", "2", "--out", tmp_path]) == 2
    err = json.loads((tmp_path / "error.json").read_text())
    assert err["exit_code"] == 2 and err["status"] == "error"
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["exit_code"] == 2


def test_parametric_rejects_categorical_x(tmp_path):
    assert main(["simulate", "--case", "mixed", "--n", "200", "--out", tmp_path]) == 0
    code = main(["fit", "--data", tmp_path / "mixed_n200_rep000.csv", "--K", "2",
                 "--method", "simultaneous-parametric", "--out", tmp_path])
    assert code == 2


def test_numerical_failure_code(tmp_path):
    # more classes than records cannot be fitted
    (tmp_path / "d.csv").write_text("x1,x2,y\n0.1,0.2,1.0\n0.3,0.1,2.0\n0.5,0.9,0.5\n")
    (tmp_path / "d.schema.json").write_text(json.dumps({"schema_version": "1.0", "columns": [
        {"name": "x1", "role": "X", "type": "continuous"}, {"name": "x2", "role": "X", "type": "continuous"},
        {"name": "y", "role": "Y", "type": "continuous"}]}))
    code = main(["fit", "--data", tmp_path / "d.csv", "--K", "3", "--method", "simultaneous-parametric",
                 "--out", tmp_path])
    assert code == 3
