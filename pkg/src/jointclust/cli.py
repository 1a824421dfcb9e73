"""Command-line front end.

::

    jointclust simulate         --config sim.yaml   --out data/
    jointclust fit              --config fit.yaml   --out fits/
    jointclust experiment       --config exp.yaml   --out results/ --jobs 4
    jointclust select-k         --config k.yaml     --out select/
    jointclust profile-classes  --fit fits/fit.json --data data/x.csv --out profile/

Settings come from a YAML file; a section named after the command, when
present, overrides the top-level keys. Relative paths in the file are taken
relative to the file. On success a JSON summary is printed to stdout; on
failure a JSON error object goes to stderr (and to ``<out>/error.json``).

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from . import io
from .em import EMSettings, ParametricModel, e_step
from .exceptions import InvalidLevel, LengthMismatch, SchemaError, UnsupportedColumnType
from .experiment import ExperimentConfig, fit_method, replication_seeds, row_columns, run_experiment, summarize
from .kernel import KernelConfig
from .losses import LossSpec
from .mm import MMSettings, SemiParamModel, elbow_k, predict, select_k
from .model import METHODS, SIMULTANEOUS_SEMIPARAMETRIC
from .plotting import experiment_boxplots, profile_plot, select_k_plot
from .simulation import CASES, SimDesign, generate, generate_mixed

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
TEST_FRACTION = 0.33
PROFILE_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)

log = logging.getLogger("jointclust")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _classify(exc) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (SchemaError, InvalidLevel, UnsupportedColumnType, LengthMismatch, OSError,
                        UnicodeDecodeError, yaml.YAMLError)):
        return EXIT_DATA
    # DegenerateComponent, SingularDesign, NoRoot, LinAlgError and anything
    # unforeseen raised inside an estimator count as numerical failures
    return EXIT_NUMERICAL


# ---------------------------------------------------------------- config

def load_config(args) -> dict:
    cfg = {}
    base = Path.cwd()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise UsageError("the config file must hold a mapping")
        # a mapping under a command name is that command's section; the
        # experiment id may also be given as a plain "experiment: <name>"
        sections = {c: raw.pop(c) for c in COMMANDS if isinstance(raw.get(c), dict)}
        cfg.update(raw)
        cfg.update(sections.get(args.command, {}))
        base = path.parent
        if cfg.get("out") is not None and not Path(cfg["out"]).is_absolute():
            cfg["out"] = base / cfg["out"]
    cfg["_base"] = base
    for key in ("seed", "out", "jobs"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    for key, v in vars(args).items():
        if key.startswith("opt_") and v is not None:
            cfg[key[4:]] = v
    return cfg


def _path(cfg, key, required=True):
    v = cfg.get(key)
    if v is None:
        if required:
            raise UsageError(f"missing setting {key!r}")
        return None
    p = Path(v)
    return p if p.is_absolute() else cfg["_base"] / p


def _out_dir(cfg) -> Path:
    if cfg.get("out") is None:
        raise UsageError("missing setting 'out' (or pass --out)")
    return Path(cfg["out"])


def _int(cfg, key, default=None, minimum=None):
    v = cfg.get(key, default)
    if v is None:
        raise UsageError(f"missing setting {key!r}")
    try:
        v = int(v)
    except (TypeError, ValueError):
        raise UsageError(f"setting {key!r} must be an integer") from None
    if minimum is not None and v < minimum:
        raise UsageError(f"setting {key!r} must be at least {minimum}")
    return v


def _loss(text) -> LossSpec:
    try:
        return LossSpec.parse(str(text))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _mm_settings(cfg, seed) -> MMSettings:
    try:
        kernel = KernelConfig.from_dict(cfg.get("bandwidth"))
        return MMSettings(max_iter=_int(cfg, "max_iter", 300, 1), n_starts=_int(cfg, "n_starts", 5, 1),
                          seed=seed, kernel=kernel)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _em_settings(cfg, seed) -> EMSettings:
    return EMSettings(max_iter=_int(cfg, "max_iter", 500, 1), n_starts=_int(cfg, "n_starts", 10, 1), seed=seed)


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg) -> dict:
    case = cfg.get("case", "case1")
    if case not in CASES + ("mixed",):
        raise UsageError(f"unknown case {case!r}")
    n = _int(cfg, "n", 500, 50)
    reps = _int(cfg, "replications", 1, 1)
    seed = _int(cfg, "seed", 0)
    out = _out_dir(cfg)
    target = cfg.get("loss_target")
    written = []
    for rep, s in enumerate(replication_seeds(seed, reps)):
        if case == "mixed":
            data = generate_mixed(n, s)
        else:
            try:
                design = SimDesign(case, n, s, _loss(target) if target else None, cfg.get("xi"))
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            data = generate(design)
        csv_path, _ = io.write_dataset(data, out / f"{case}_n{n}_rep{rep:03d}.csv")
        written.append(str(csv_path))
    return {"datasets": written}


def _fit_data(cfg):
    return io.read_dataset(_path(cfg, "data"), _path(cfg, "schema", required=False))


def _predict(model, data, loss):
    if isinstance(model, ParametricModel):
        return model.predict(data.u, data.x)
    return predict(model, data.u, data.x, loss)


def cmd_fit(cfg) -> dict:
    data = _fit_data(cfg)
    K = _int(cfg, "K", None, 1)
    loss = _loss(cfg.get("loss", "quadratic"))
    method = cfg.get("method", cfg.get("mode", SIMULTANEOUS_SEMIPARAMETRIC))
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    seed = _int(cfg, "seed", 0)
    frac = float(cfg.get("test_fraction", TEST_FRACTION))
    if not 0 <= frac < 1:
        raise UsageError("test_fraction must lie in [0, 1)")
    em, mm = _em_settings(cfg, seed), _mm_settings(cfg, seed)
    train, test = data, None
    if frac > 0:
        perm = np.random.default_rng(seed).permutation(data.n)
        n_test = int(round(frac * data.n))
        train, test = data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_method(train, K, method, loss, em, mm, bool(cfg.get("hard", False))).canonical()
    model = fit.params
    evaluation = {"n_train": train.n, "test_fraction": frac}
    if test is not None:
        evaluation.update(n_test=test.n, test_mse=float(np.mean((test.y - _predict(model, test, loss)) ** 2)))
    evaluation["warnings"] = sorted({str(w.message) for w in caught})
    settings = {"method": method, "loss": str(loss), "K": K, "seed": seed, "test_fraction": frac,
                "n_starts": mm.n_starts if "semiparametric" in method else em.n_starts,
                "max_iter": mm.max_iter if "semiparametric" in method else em.max_iter,
                "bandwidth": mm.kernel.to_dict()}
    doc = io.fit_to_artifact(fit, train, settings, evaluation)
    out = _out_dir(cfg)
    path = io.write_artifact(doc, out / "fit.json")
    rows = [{"class": k + 1, "pi": fit.pi[k], "delta": fit.coeffs.delta[k]} for k in range(fit.K)]
    for j, name in enumerate(train.u_names):
        rows.append({"class": "", "term": name, "gamma": fit.coeffs.gamma[j]})
    io.write_rows(rows, out / "coefficients.csv", ["class", "pi", "delta", "term", "gamma"])
    return {"artifact": str(path), "coefficients": str(out / "coefficients.csv"),
            "converged": fit.converged, "n_iter": fit.n_iter, **{k: v for k, v in evaluation.items()
                                                                   if k != "warnings"}}


def cmd_experiment(cfg) -> dict:
    keys = {k: v for k, v in cfg.items() if not k.startswith("_") and k not in ("out", "jobs")}
    try:
        config = ExperimentConfig.from_dict(keys)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    jobs = _int(cfg, "jobs", 1)
    out = _out_dir(cfg)
    rows = run_experiment(config, jobs=jobs)
    rep_path = io.write_rows(rows, out / f"{config.name}_replications.csv", row_columns(rows))
    agg = summarize(rows)
    agg_path = io.write_rows(agg, out / f"{config.name}_aggregate.csv")
    plots = experiment_boxplots(rows, out, prefix=f"{config.name}_")
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        log.warning("%d of %d fits failed and were excluded", failed, len(rows))
    return {"replications_csv": str(rep_path), "aggregate_csv": str(agg_path),
            "plots": [str(p) for p in plots], "n_rows": len(rows), "n_failed": failed}


def cmd_select_k(cfg) -> dict:
    data = _fit_data(cfg)
    k_range = cfg.get("k_range", [1, 2, 3, 4])
    if isinstance(k_range, dict):
        k_range = list(range(int(k_range["min"]), int(k_range["max"]) + 1))
    if not isinstance(k_range, (list, tuple)) or not k_range:
        raise UsageError("k_range must be a non-empty list or a {min, max} mapping")
    losses = cfg.get("losses", cfg.get("loss", ["quadratic"]))
    losses = [losses] if isinstance(losses, str) else list(losses)
    seed = _int(cfg, "seed", 0)
    mm = _mm_settings(cfg, seed)
    n_folds = _int(cfg, "n_folds", 5, 2)
    rows = []
    for text in losses:
        loss = _loss(text)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = select_k(data, [int(k) for k in k_range], loss, mm, n_folds)
        best = elbow_k([r["K"] for r in res], [r["smoothed_loglik"] for r in res])
        best_cv = min((r for r in res if np.isfinite(r["cv_mse"])), key=lambda r: r["cv_mse"], default=None)
        for r in res:
            rows.append({"loss": str(loss), **r, "elbow": r["K"] == best,
                         "min_cv_mse": best_cv is not None and r["K"] == best_cv["K"]})
    out = _out_dir(cfg)
    table = io.write_rows(rows, out / "select_k.csv",
                          ["loss", "K", "smoothed_loglik", "cv_mse", "elbow", "min_cv_mse", "error"])
    plot = select_k_plot(rows, out / "select_k.png")
    return {"table": str(table), "plot": str(plot),
            "elbow": {l: next((r["K"] for r in rows if r["loss"] == l and r["elbow"]), None)
                      for l in dict.fromkeys(r["loss"] for r in rows)}}


def class_profiles(doc, model) -> list:
    """Per-class summaries of each X column in the units of the data."""
    loc = np.asarray(doc["standardization"]["x_loc"])
    scale = np.asarray(doc["standardization"]["x_scale"])
    out = []
    for j, col in enumerate(doc["columns"]["x"]):
        if col["type"] == "categorical":
            probs = np.array([model.components[k][j].probs for k in range(model.K)])
            out.append({"name": col["name"], "type": "categorical", "levels": col["levels"],
                        "probs": probs.tolist()})
            continue
        means, qs = [], []
        for k in range(model.K):
            if isinstance(model, ParametricModel):
                comp = model.components[k]
                m, sd = comp.means[j], np.sqrt(comp.variances[j])
                means.append(m)
                qs.append([float(stats.norm.ppf(q, m, sd)) for q in PROFILE_QUANTILES])
            else:
                kde = model.components[k][j]
                means.append(kde.mean() * scale[j] + loc[j])
                qs.append([kde.quantile(q) * scale[j] + loc[j] for q in PROFILE_QUANTILES])
        out.append({"name": col["name"], "type": "continuous", "mean": [float(m) for m in means],
                    "quantiles": qs})
    return out


def cmd_profile_classes(cfg) -> dict:
    doc = io.read_artifact(_path(cfg, "fit"))
    model = io.model_from_artifact(doc)
    data = io.read_dataset(_path(cfg, "data"), _path(cfg, "schema", required=False))
    names = [c["name"] for c in doc["columns"]["x"]]
    if list(data.x_names) != names:
        raise SchemaError(f"dataset X columns {list(data.x_names)} differ from the fit's {names}")
    for c, spec in zip(data.x_columns, doc["columns"]["x"]):
        if c.kind != spec["type"] or (c.levels and list(c.levels) != spec.get("levels")):
            raise SchemaError(f"column {c.name!r} does not match the fit's type or levels")
    if isinstance(model, SemiParamModel):
        t = model.responsibilities(data) if model.noise_smoother is not None else model.posterior_x(data.x)
    else:
        t = e_step(model, data.u, data.x, data.y)[0] if model.noise is not None else model.posterior_x(data.x)
    labels = np.argmax(t, axis=1)
    out = _out_dir(cfg)
    profiles = class_profiles(doc, model)
    files = []
    summary = [{"class": k + 1, "pi": float(model.pi[k]), "delta": float(model.coeffs.delta[k]),
                "n_assigned": int(np.sum(labels == k)), "mean_responsibility": float(t[:, k].mean())}
               for k in range(model.K)]
    files.append(io.write_rows(summary, out / "profile_classes.csv"))
    for p in profiles:
        if p["type"] == "categorical":
            rows = [{"class": k + 1, **dict(zip(p["levels"], p["probs"][k]))} for k in range(model.K)]
            cols = ["class"] + list(p["levels"])
        else:
            qnames = [f"q{int(round(q * 100)):02d}" for q in PROFILE_QUANTILES]
            rows = [{"class": k + 1, "mean": p["mean"][k], **dict(zip(qnames, p["quantiles"][k]))}
                    for k in range(model.K)]
            cols = ["class", "mean"] + qnames
        files.append(io.write_rows(rows, out / f"profile_{p['name']}.csv", cols))
    _write_json(out / "profiles.json", {"schema_version": io.SCHEMA_VERSION, "classes": summary,
                                        "columns": profiles})
    plot = profile_plot(profiles, out / "profiles.png")
    return {"tables": [str(f) for f in files], "json": str(out / "profiles.json"),
            "plot": None if plot is None else str(plot)}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "experiment": cmd_experiment,
    "select-k": cmd_select_k,
    "profile-classes": cmd_profile_classes,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jointclust", description="Joint clustering and regression with a latent group effect.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="YAML settings file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, help="worker processes (experiment only)")
        return p

    p = common(sub.add_parser("simulate", help="write simulated datasets"))
    p.add_argument("--case", dest="opt_case", choices=CASES + ("mixed",))
    p.add_argument("--n", dest="opt_n", type=int)
    p.add_argument("--replications", dest="opt_replications", type=int)
    p.add_argument("--loss-target", dest="opt_loss_target")

    p = common(sub.add_parser("fit", help="fit one model and write its artifact"))
    p.add_argument("--data", dest="opt_data")
    p.add_argument("--K", "-k", dest="opt_K", type=int)
    p.add_argument("--loss", dest="opt_loss")
    p.add_argument("--method", dest="opt_method", choices=METHODS)

    common(sub.add_parser("experiment", help="replicated simulation study"))

    p = common(sub.add_parser("select-k", help="smoothed log-likelihood and CV-MSE over K"))
    p.add_argument("--data", dest="opt_data")

    p = common(sub.add_parser("profile-classes", help="per-class tables of a fitted model"))
    p.add_argument("--fit", dest="opt_fit")
    p.add_argument("--data", dest="opt_data")
    return parser


def main(argv=None) -> int:
    out = None
    command = None
    try:
        args = build_parser().parse_args(None if argv is None else [str(a) for a in argv])
        command = args.command
        if command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args)
        out = cfg.get("out")
        with np.errstate(all="ignore"):
            result = COMMANDS[command](cfg)
        print(json.dumps({"status": "ok", "command": command, **result}, sort_keys=True, default=str))
        return EXIT_OK
    except Exception as exc:
        code = _classify(exc)
        err = {"status": "error", "command": command, "exit_code": code,
               "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        if out is not None:
            try:
                _write_json(Path(out) / "error.json", err)
            except OSError:
                pass
        return code


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
