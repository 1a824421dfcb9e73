import json
from pathlib import Path

import numpy as np
import pytest

from jointclust import io
from jointclust.em import EMSettings, em_fit
from jointclust.exceptions import InvalidLevel, SchemaError
from jointclust.losses import LossSpec
from jointclust.mm import MMSettings, mm_fit, predict, smoothed_loglik
from jointclust.simulation import SimDesign, generate, generate_mixed

FIXTURES = Path(__file__).parent / "fixtures"


def test_simulated_round_trip(tmp_path):
    data = generate(SimDesign("case1", 500, 3))
    csv_path, schema_path = io.write_dataset(data, tmp_path / "case1.csv")
    assert schema_path.name == "case1.schema.json"
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 501
    assert lines[0] == "u1,u2,x1,x2,x3,x4,y,z"
    back = io.read_dataset(csv_path)
    np.testing.assert_array_equal(back.u, data.u)
    np.testing.assert_array_equal(back.x, data.x)
    np.testing.assert_array_equal(back.y, data.y)
    np.testing.assert_array_equal(back.true_z, data.true_z)
    assert back.u_names == data.u_names


def test_mixed_round_trip(tmp_path):
    data = generate_mixed(300, seed=1)
    path, _ = io.write_dataset(data, tmp_path / "mixed.csv")
    back = io.read_dataset(path)
    assert [c.kind for c in back.x_columns] == [c.kind for c in data.x_columns]
    for a, b in zip(back.x_columns, data.x_columns):
        np.testing.assert_array_equal(a.values, b.values)
        assert a.levels == b.levels


@pytest.mark.parametrize("name", ["survey", "minimal", "labeled"])
def test_hand_written_sidecars_validate(name):
    doc = io.read_schema(FIXTURES / f"{name}.schema.json")
    assert doc["columns"]


def test_survey_fixture_reading():
    report = {}
    data = io.read_dataset(FIXTURES / "survey.csv", report=report)
    assert report == {"n_read": 6, "n_dropped": 2, "n": 4}
    assert data.u_names == ("gender[M]", "age")
    np.testing.assert_array_equal(data.u[:, 0], [0, 1, 0, 1])
    tv = data.x_columns[1]
    assert tv.levels == ("low", "medium", "high")
    np.testing.assert_array_equal(tv.values, [0, 2, 0, 2])
    assert data.true_z is None


def test_labeled_fixture_ignores_extra_columns():
    data = io.read_dataset(FIXTURES / "labeled.csv")
    np.testing.assert_array_equal(data.true_z, [0, 1, 1, 0])
    assert data.d_x == 2 and data.d_u == 1


def test_minimal_fixture_has_no_covariates():
    data = io.read_dataset(FIXTURES / "minimal.csv")
    assert data.d_u == 0 and data.n == 3


def _schema(tmp_path, doc):
    p = tmp_path / "bad.schema.json"
    p.write_text(json.dumps(doc))
    return p


@pytest.mark.parametrize("doc", [
    {"schema_version": "2.0", "columns": [{"name": "y", "role": "Y", "type": "continuous"}]},
    {"schema_version": "1.0", "columns": [{"name": "x", "role": "X", "type": "continuous"}]},
    {"schema_version": "1.0", "columns": [{"name": "y", "role": "Y", "type": "categorical", "levels": ["a"]}]},
    {"schema_version": "1.0", "columns": [{"name": "y", "role": "Y", "type": "continuous"},
                                          {"name": "c", "role": "X", "type": "categorical"}]},
    {"schema_version": "1.0", "columns": [{"name": "y", "role": "Y", "type": "continuous"},
                                          {"name": "y", "role": "X", "type": "continuous"}]},
    {"schema_version": "1.0", "columns": [{"name": "y", "role": "W", "type": "continuous"}]},
])
def test_invalid_sidecars(tmp_path, doc):
    with pytest.raises(SchemaError):
        io.read_schema(_schema(tmp_path, doc))


def test_undeclared_level(tmp_path):
    (tmp_path / "d.csv").write_text("c,y\nred,1.0\nblue,2.0\n")
    (tmp_path / "d.schema.json").write_text(json.dumps({"schema_version": "1.0", "columns": [
        {"name": "c", "role": "X", "type": "categorical", "levels": ["red"]},
        {"name": "y", "role": "Y", "type": "continuous"}]}))
    with pytest.raises(InvalidLevel):
        io.read_dataset(tmp_path / "d.csv")


def test_unparseable_number(tmp_path):
    (tmp_path / "d.csv").write_text("x,y\n1.0,abc\n")
    (tmp_path / "d.schema.json").write_text(json.dumps({"schema_version": "1.0", "columns": [
        {"name": "x", "role": "X", "type": "continuous"}, {"name": "y", "role": "Y", "type": "continuous"}]}))
    with pytest.raises(SchemaError):
        io.read_dataset(tmp_path / "d.csv")


def test_result_tables_versioned(tmp_path):
    rows = [{"a": 1, "b": 0.1}, {"a": 2, "b": None, "c": "x"}]
    path = io.write_rows(rows, tmp_path / "t.csv")
    assert path.read_text().splitlines()[0] == "schema_version,a,b,c"
    back = io.read_rows(path)
    assert back[0]["a"] == 1.0 and back[1]["b"] is None and back[1]["c"] == "x"
    path.write_text(path.read_text().replace("\n1.0,", "\n2.0,", 1))
    with pytest.raises(SchemaError):
        io.read_rows(path)


def test_cell_format_round_trips():
    for v in (0.1, 1e-300, -3.141592653589793, 123456789.123456789):
        assert float(io.fmt(v)) == v
    assert io.fmt(float("nan")) == "" and io.fmt(None) == "" and io.fmt(True) == "true"


def test_semiparametric_artifact_round_trip(tmp_path):
    data = generate_mixed(300, seed=4)
    fit = mm_fit(data, 2, LossSpec.quadratic(), MMSettings(max_iter=30, n_starts=1))
    doc = io.fit_to_artifact(fit, data, {"K": 2})
    path = io.write_artifact(doc, tmp_path / "fit.json")
    back = io.read_artifact(path)
    model = io.model_from_artifact(back)
    np.testing.assert_array_equal(predict(model, data.u, data.x), predict(fit.params, data.u, data.x))
    assert smoothed_loglik(data, model) == pytest.approx(smoothed_loglik(data, fit.params), rel=1e-12)
    assert io.loss_from_artifact(back) == LossSpec.quadratic()


def test_parametric_artifact_round_trip(tmp_path):
    data = generate(SimDesign("case1", 300, 1))
    fit = em_fit(data, 2, LossSpec.quantile(0.75), EMSettings(n_starts=2))
    path = io.write_artifact(io.fit_to_artifact(fit, data), tmp_path / "fit.json")
    model = io.model_from_artifact(io.read_artifact(path))
    np.testing.assert_array_equal(model.predict(data.u, data.x), fit.params.predict(data.u, data.x))
    assert model.noise == fit.params.noise


def test_artifact_schema_rejects_bad_documents(tmp_path):
    data = generate(SimDesign("case1", 100, 1))
    doc = io.fit_to_artifact(em_fit(data, 1, "gaussian", EMSettings(n_starts=1)), data)
    for mutate in (lambda d: d.pop("params"), lambda d: d.update(method="bogus"),
                   lambda d: d.update(schema_version="3.0"), lambda d: d["params"].update(pi="x")):
        bad = json.loads(json.dumps(doc))
        mutate(bad)
        with pytest.raises(SchemaError):
            io.validate(bad, "fit")
