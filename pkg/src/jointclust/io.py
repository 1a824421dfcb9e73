"""Files on disk: dataset CSVs with a JSON sidecar schema, fit artifacts and result tables.

A dataset is a UTF-8 CSV with a header row and '.' as decimal mark, plus a
sidecar ``<stem>.schema.json`` giving each column's role (U, X, Y or Z),
type and, for categorical columns, the ordered list of levels. Simulated
class labels (role Z) are written 1-based, as levels "1".."K".

Every file carries a ``schema_version`` string ``"major.minor"``; readers
accept any minor version of a major they know and reject the rest.
"""

from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .data import CATEGORICAL, CONTINUOUS, Column, Dataset
from .em import GaussianComponent, ParametricModel, ParametricNoise
from .exceptions import InvalidLevel, SchemaError
from .kernel import CategoricalPMF, ContinuousKDE, log_smooth
from .losses import LossSpec, RegressionCoefficients
from .mm import SemiParamModel
from .model import FitResult

SCHEMA_VERSION = "1.0"
SUPPORTED_MAJOR = 1
MISSING = frozenset({"", "NA", "NaN", "nan", "null", "."})


def _load_schema(name):
    return json.loads(resources.files("jointclust").joinpath("schemas", name).read_text("utf-8"))


def check_version(version) -> None:
    """Raise SchemaError unless ``version`` has a supported major number."""
    try:
        major = int(str(version).split(".")[0])
    except ValueError:
        raise SchemaError(f"malformed schema_version {version!r}") from None
    if major != SUPPORTED_MAJOR:
        raise SchemaError(f"unsupported schema major version {major} (this reader knows {SUPPORTED_MAJOR})")


def validate(doc: dict, kind: str) -> None:
    """Validate a sidecar (``kind="dataset"``) or fit artifact (``kind="fit"``)."""
    if not isinstance(doc, dict):
        raise SchemaError(f"{kind} document must be a JSON object")
    if "schema_version" in doc:
        check_version(doc["schema_version"])
    try:
        jsonschema.validate(doc, _load_schema(f"{kind}.schema.json"))
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise SchemaError(f"{kind} schema violation at '{path}': {exc.message}") from None


def fmt(v) -> str:
    """Shortest round-trip text for a CSV cell."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".schema.json")


# ---------------------------------------------------------------- datasets

def dataset_schema(data: Dataset) -> dict:
    cols = [{"name": n, "role": "U", "type": CONTINUOUS} for n in data.u_names]
    for c in data.x_columns:
        entry = {"name": c.name, "role": "X", "type": c.kind}
        if c.kind == CATEGORICAL:
            entry["levels"] = [str(v) for v in c.levels]
        cols.append(entry)
    cols.append({"name": data.y_name, "role": "Y", "type": CONTINUOUS})
    if data.true_z is not None:
        K = int(data.true_z.max()) + 1
        cols.append({"name": "z", "role": "Z", "type": CATEGORICAL,
                     "levels": [str(k + 1) for k in range(K)]})
    return {"schema_version": SCHEMA_VERSION, "n_rows": data.n, "columns": cols}


def write_dataset(data: Dataset, path, schema_path=None):
    """Write ``data`` as CSV plus sidecar; returns both paths."""
    path = Path(path)
    schema_path = Path(schema_path) if schema_path else sidecar_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    schema = dataset_schema(data)
    cols = [data.u[:, j] for j in range(data.d_u)]
    for c in data.x_columns:
        cols.append(c.values if c.is_continuous else [c.levels[v] for v in c.values])
    cols.append(data.y)
    if data.true_z is not None:
        cols.append(data.true_z + 1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c["name"] for c in schema["columns"]])
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row])
    schema_path.write_text(json.dumps(schema, indent=2) + "\n", encoding="utf-8")
    return path, schema_path


def read_schema(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"sidecar {path} is not valid JSON: {exc}") from None
    validate(doc, "dataset")
    roles = [c["role"] for c in doc["columns"]]
    if roles.count("Y") != 1:
        raise SchemaError("schema needs exactly one Y column")
    if roles.count("Z") > 1:
        raise SchemaError("schema allows at most one Z column")
    names = [c["name"] for c in doc["columns"]]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate column names in schema")
    for c in doc["columns"]:
        if c["role"] in ("Y",) and c["type"] != CONTINUOUS:
            raise SchemaError("the Y column must be continuous")
        if c["role"] == "Z" and c["type"] != CATEGORICAL:
            raise SchemaError("the Z column must be categorical")
    return doc


def _parse_float(text, name):
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"column {name!r}: cannot parse {text!r} as a number") from None


def read_dataset(path, schema_path=None, report=None) -> Dataset:
    """Read a CSV dataset described by its sidecar schema.

    Rows with a missing value in any column named by the schema are dropped;
    when ``report`` is a dict, the counts are stored in it. Categorical U
    columns enter the regression as indicators of every level but the first.
    """
    path = Path(path)
    schema = read_schema(schema_path or sidecar_path(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        rows = list(reader)
    index = {name: i for i, name in enumerate(header)}
    for c in schema["columns"]:
        if c["name"] not in index:
            raise SchemaError(f"column {c['name']!r} is in the schema but not in {path.name}")
    want = [index[c["name"]] for c in schema["columns"]]
    kept = []
    for line, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path.name} line {line}: {len(row)} fields, header has {len(header)}")
        if not any(row[i].strip() in MISSING for i in want):
            kept.append(row)
    if report is not None:
        report.update(n_read=len(rows), n_dropped=len(rows) - len(kept), n=len(kept))
    if not kept:
        raise SchemaError("no complete rows")

    def values(c):
        raw = [r[index[c["name"]]].strip() for r in kept]
        if c["type"] == CONTINUOUS:
            return np.array([_parse_float(v, c["name"]) for v in raw])
        lookup = {lvl: i for i, lvl in enumerate(c["levels"])}
        bad = sorted({v for v in raw if v not in lookup})
        if bad:
            raise InvalidLevel(f"column {c['name']!r}: undeclared levels {bad[:5]}")
        return np.array([lookup[v] for v in raw], dtype=int)

    u_cols, u_names, x_cols, y, z = [], [], [], None, None
    for c in schema["columns"]:
        v = values(c)
        if c["role"] == "U":
            if c["type"] == CONTINUOUS:
                u_cols.append(v)
                u_names.append(c["name"])
            else:
                for i, lvl in enumerate(c["levels"][1:], start=1):
                    u_cols.append((v == i).astype(float))
                    u_names.append(f"{c['name']}[{lvl}]")
        elif c["role"] == "X":
            x_cols.append(Column(c["name"], c["type"], v, tuple(c.get("levels") or ()) or None))
        elif c["role"] == "Y":
            y, y_name = v, c["name"]
        else:
            z = v
    u = np.column_stack(u_cols) if u_cols else np.zeros((len(kept), 0))
    return Dataset(u, tuple(x_cols), y, z, tuple(u_names), y_name)


# ---------------------------------------------------------------- results tables

def write_rows(rows, path, columns=None):
    """Write dict rows as CSV with a leading ``schema_version`` column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    columns = ["schema_version"] + [c for c in columns if c != "schema_version"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([SCHEMA_VERSION if c == "schema_version" else fmt(r.get(c)) for c in columns])
    return path


def read_rows(path) -> list:
    """Read a results table; numeric-looking cells become floats."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        check_version(r.get("schema_version", ""))
        d = {}
        for k, v in r.items():
            try:
                d[k] = float(v) if v != "" else None
            except ValueError:
                d[k] = v
        out.append(d)
    return out


# ---------------------------------------------------------------- fit artifacts

def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _density_doc(rep):
    if isinstance(rep, ContinuousKDE):
        return {"type": "kde", "h": float(rep.h), "points": _floats(rep.points), "weights": _floats(rep.weights)}
    if isinstance(rep, CategoricalPMF):
        return {"type": "pmf", "probs": _floats(rep.probs)}
    raise TypeError(f"cannot serialise {type(rep).__name__}")


def _density_from(doc):
    if doc["type"] == "kde":
        return ContinuousKDE(np.array(doc["points"]), np.array(doc["weights"]), doc["h"])
    if doc["type"] == "pmf":
        return CategoricalPMF(np.array(doc["probs"]))
    raise SchemaError(f"unexpected density type {doc['type']!r}")


def fit_to_artifact(fit: FitResult, data: Dataset, settings=None, evaluation=None) -> dict:
    """JSON-ready description of a fit; classes are emitted in the order of ``fit``."""
    p = fit.params
    if isinstance(p, SemiParamModel):
        comps = [[_density_doc(r) for r in comp] for comp in p.components]
        noise = None if p.noise is None else _density_doc(p.noise)
        loc, scale = _floats(p.x_loc), _floats(p.x_scale)
    else:
        comps = [[{"type": "gaussian", "mean": float(m), "variance": float(v)}
                  for m, v in zip(c.means, c.variances)] for c in p.components]
        noise = None if p.noise is None else {"type": "parametric", "family": p.noise.family,
                                              "scale": float(p.noise.scale), "tau": p.noise.tau}
        loc, scale = [0.0] * data.d_x, [1.0] * data.d_x
    diag = {k: (v if isinstance(v, (bool, str)) or v is None else float(v))
            for k, v in fit.diagnostics.items()}
    doc = {
        "schema_version": SCHEMA_VERSION,
        "method": fit.method,
        "loss": str(fit.loss),
        "K": fit.K,
        "seed": int(fit.seed or 0),
        "settings": settings or {},
        "columns": {
            "u": list(data.u_names),
            "x": [{"name": c.name, "type": c.kind, **({"levels": list(c.levels)} if c.levels else {})}
                  for c in data.x_columns],
            "y": data.y_name,
        },
        "standardization": {"x_loc": loc, "x_scale": scale},
        "params": {"pi": _floats(p.pi), "gamma": _floats(p.coeffs.gamma), "delta": _floats(p.coeffs.delta),
                   "components": comps, "noise": noise},
        "trajectory": _floats(fit.trajectory),
        "objective": fit.objective,
        "converged": bool(fit.converged),
        "n_iter": int(fit.n_iter),
        "diagnostics": {**diag, "best_start": int(fit.best_start), "n_starts_run": int(fit.n_starts_run)},
    }
    if evaluation is not None:
        doc["evaluation"] = evaluation
    return doc


def write_artifact(doc: dict, path) -> Path:
    validate(doc, "fit")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_artifact(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"fit artifact {path} is not valid JSON: {exc}") from None
    validate(doc, "fit")
    return doc


def model_from_artifact(doc: dict):
    """Rebuild the fitted model (ParametricModel or SemiParamModel) from an artifact."""
    p = doc["params"]
    coeffs = RegressionCoefficients(np.array(p["gamma"]), np.array(p["delta"]))
    pi = np.array(p["pi"])
    first = p["components"][0][0] if p["components"] and p["components"][0] else {"type": "kde"}
    if first["type"] == "gaussian":
        comps = tuple(GaussianComponent([c["mean"] for c in comp], [c["variance"] for c in comp])
                      for comp in p["components"])
        nd = p["noise"]
        noise = None if nd is None else ParametricNoise(nd["family"], nd["scale"], nd.get("tau"))
        return ParametricModel(pi, coeffs, comps, noise)
    comps = tuple(tuple(_density_from(c) for c in comp) for comp in p["components"])
    smoothers = tuple(tuple(log_smooth(r) if isinstance(r, ContinuousKDE) else r for r in comp)
                      for comp in comps)
    noise = None if p["noise"] is None else _density_from(p["noise"])
    h = next((r.h for comp in comps for r in comp if isinstance(r, ContinuousKDE)),
             noise.h if noise is not None else 1.0)
    st = doc["standardization"]
    return SemiParamModel(pi, coeffs, comps, noise, smoothers,
                          None if noise is None else log_smooth(noise),
                          np.array(st["x_loc"]), np.array(st["x_scale"]), float(h), None)


def loss_from_artifact(doc: dict) -> LossSpec:
    return LossSpec.parse(doc["loss"])
