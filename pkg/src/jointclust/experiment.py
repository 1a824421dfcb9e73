"""Replicated simulation experiments: every method on the same seeded datasets.

Each replication draws one dataset per (case, n) and fits it with every
configured method and loss. Replications are independent and may run on a
worker pool; rows come back in a fixed order so the output table does not
depend on the number of workers. A fit that raises is recorded with
``status="failed"`` and left out of the aggregates.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .em import EMSettings, em_fit
from .kernel import KernelConfig
from .losses import LossSpec, RegressionCoefficients
from .metrics import evaluate
from .mm import MMSettings, mm_fit
from .model import (METHODS, SIMULTANEOUS_PARAMETRIC, SIMULTANEOUS_SEMIPARAMETRIC,
                    TWO_STEP_PARAMETRIC, TWO_STEP_SEMIPARAMETRIC)
from .simulation import CASES, SimDesign, generate
from .twostep import PARAMETRIC, SEMIPARAMETRIC, two_step_fit, x_only_fit

log = logging.getLogger(__name__)

_PARAMETRIC_LOSSES = ("quadratic", "absolute", "quantile", "expectile")


@dataclass
class ExperimentConfig:
    """One experiment grid: cases x sample sizes x replications x methods x losses."""

    name: str = "experiment"
    cases: tuple = ("case1",)
    ns: tuple = (500,)
    replications: int = 20
    methods: tuple = METHODS
    losses: tuple = ("quadratic",)
    K: int = 2
    seed: int = 0
    hard_two_step: bool = False
    em: EMSettings = field(default_factory=EMSettings)
    mm: MMSettings = field(default_factory=MMSettings)

    def __post_init__(self):
        self.cases = tuple(self.cases)
        self.ns = tuple(int(n) for n in self.ns)
        self.methods = tuple(self.methods)
        self.losses = tuple(str(LossSpec.parse(l)) if isinstance(l, str) else str(l) for l in self.losses)
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        for c in self.cases:
            if c not in CASES:
                raise ValueError(f"unknown case {c!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not self.losses:
            raise ValueError("at least one loss is needed")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        em = EMSettings(**d.pop("em", {}) or {})
        mm_d = dict(d.pop("mm", {}) or {})
        kernel = KernelConfig.from_dict(mm_d.pop("bandwidth", None) or d.pop("bandwidth", None))
        mm = MMSettings(kernel=kernel, **mm_d)
        if "n" in d:
            d["ns"] = d.pop("n")
        if "experiment" in d:
            d["name"] = d.pop("experiment")
        for key in ("cases", "ns", "methods", "losses"):
            if key in d and not isinstance(d[key], (list, tuple)):
                d[key] = [d[key]]
        known = set(cls.__dataclass_fields__) - {"em", "mm"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment settings: {sorted(unknown)}")
        return cls(em=em, mm=mm, **d)


def replication_seeds(seed: int, replications: int) -> list:
    """Independent 32-bit seeds for each replication, derived from one master seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(replications)]


def supports(method: str, loss: LossSpec) -> bool:
    """Whether ``method`` can be run with ``loss``.

    The parametric joint model needs a noise density matched to the loss,
    which exists for the quadratic, absolute, quantile and expectile losses.
    """
    return method != SIMULTANEOUS_PARAMETRIC or loss.kind in _PARAMETRIC_LOSSES


def fit_method(data, K, method, loss: LossSpec, em: EMSettings, mm: MMSettings, hard=False, cache=None):
    """Fit one method. ``cache`` (a dict, one per dataset) shares X-only clusterings between calls."""
    cache = {} if cache is None else cache

    def x_only(mode, settings):
        key = (mode, settings)
        if key not in cache:
            cache[key] = x_only_fit(data, K, mode, settings)
        return cache[key]

    if method == SIMULTANEOUS_PARAMETRIC:
        return em_fit(data, K, loss, em)
    if method == SIMULTANEOUS_SEMIPARAMETRIC:
        # the MM warm start is the single-start X-only fit
        warm = None if K == 1 else x_only(SEMIPARAMETRIC, replace(mm, n_starts=1))[1]
        return mm_fit(data, K, loss, mm, init_resp=warm)
    if method == TWO_STEP_PARAMETRIC:
        return two_step_fit(data, K, loss, PARAMETRIC, em, hard, x_only(PARAMETRIC, em))
    if method == TWO_STEP_SEMIPARAMETRIC:
        return two_step_fit(data, K, loss, SEMIPARAMETRIC, mm, hard, x_only(SEMIPARAMETRIC, mm))
    raise ValueError(f"unknown method {method!r}")


def _design(case, n, seed, loss):
    return SimDesign(case, n, seed, loss_target=loss if case == "asym" else None)


def run_replication(config: ExperimentConfig, case: str, n: int, rep: int, seed: int) -> list:
    """Fit every (loss, method) pair on the datasets of one replication."""
    rows = []
    cached = None
    cache = {}
    for loss_text in config.losses:
        loss = LossSpec.parse(loss_text)
        base = {"experiment": config.name, "case": case, "n": n, "rep": rep, "seed": seed, "loss": loss_text}
        try:
            if case == "asym" or cached is None:
                design = _design(case, n, seed, loss)
                cached = (design, generate(design))
                cache = {}
            design, data = cached
        except Exception as exc:
            for method in config.methods:
                rows.append({**base, "method": method, "status": "failed",
                             "error": f"{type(exc).__name__}: {exc}"})
            continue
        truth = RegressionCoefficients(np.asarray(design.gamma), np.asarray(design.delta))
        em = EMSettings(config.em.max_iter, config.em.rel_tol, config.em.n_starts, seed)
        mm = MMSettings(config.mm.max_iter, config.mm.rel_tol, config.mm.n_starts, seed,
                        config.mm.kernel, config.mm.standardize, config.mm.abs_tol)
        for method in config.methods:
            row = {**base, "method": method}
            if not supports(method, loss):
                continue
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    fit = fit_method(data, config.K, method, loss, em, mm, config.hard_two_step, cache)
                report = evaluate(fit, truth, data.true_z)
                row.update(report.csv_row())
                row.update(status="ok", n_iter=fit.n_iter, converged=fit.converged,
                           objective=fit.final_objective, error=None)
                for j, name in enumerate(data.u_names):
                    row[f"gamma_{name}"] = float(fit.coeffs.gamma[j])
                aligned = fit.coeffs.permuted(report.permutation)
                for k, v in enumerate(aligned.delta):
                    row[f"delta_{k + 1}"] = float(v)
            except Exception as exc:  # recorded and excluded from the aggregates
                log.warning("%s %s n=%d rep=%d %s failed: %s", case, loss_text, n, rep, method, exc)
                row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
    return rows


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> list:
    """Run all replications; returns per-fit rows in (case, n, rep, loss, method) order."""
    seeds = replication_seeds(config.seed, config.replications)
    tasks = [(case, n, rep, seeds[rep]) for case in config.cases for n in config.ns
             for rep in range(config.replications)]
    if jobs == 1:
        chunks = [run_replication(config, *t) for t in tasks]
    else:
        chunks = Parallel(n_jobs=jobs)(delayed(run_replication)(config, *t) for t in tasks)
    return [row for chunk in chunks for row in chunk]


ROW_COLUMNS = ("experiment", "case", "n", "rep", "seed", "loss", "method", "status", "ari", "beta_mse",
               "prediction_mse", "n_iter", "converged", "objective", "error")


def row_columns(rows) -> list:
    cols = list(ROW_COLUMNS)
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    return cols


def summarize(rows) -> list:
    """Medians of ``beta_mse`` and ``ari`` per (case, n, loss, method), with failure counts."""
    groups = {}
    for r in rows:
        key = (r["case"], int(r["n"]), r["loss"], r["method"])
        groups.setdefault(key, []).append(r)
    out = []
    for (case, n, loss, method), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        mse = np.array([float(r["beta_mse"]) for r in ok])
        ari = np.array([float(r["ari"]) for r in ok])
        out.append({
            "case": case, "n": n, "loss": loss, "method": method,
            "n_ok": len(ok), "n_failed": len(rs) - len(ok),
            "median_beta_mse": float(np.median(mse)) if ok else None,
            "mean_beta_mse": float(np.mean(mse)) if ok else None,
            "median_ari": float(np.median(ari)) if ok else None,
        })
    return out
