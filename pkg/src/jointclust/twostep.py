"""Two-step baseline: cluster X alone, then regress with the frozen memberships."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .data import Dataset
from .em import EMSettings, ParametricNoise, _continuous_x, multi_start, run_em
from .kernel import ContinuousKDE, log_smooth
from .losses import LossSpec, weighted_loss_fit
from .mm import MMSettings, _fit as _mm_fit
from .model import TWO_STEP_PARAMETRIC, TWO_STEP_SEMIPARAMETRIC, FitResult

PARAMETRIC = "parametric"
SEMIPARAMETRIC = "semiparametric"


def _x_only(data, K, mode, settings):
    if mode == PARAMETRIC:
        settings = settings if isinstance(settings, EMSettings) else EMSettings()
        x = _continuous_x(data)

        def run(t0):
            return run_em(data.u, x, data.y, t0, None, settings, use_y=False)

        start, (params, t, traj, converged), runs, restarts = multi_start(x, K, settings, run)
        return params, t, traj, converged, start, runs, restarts
    if mode == SEMIPARAMETRIC:
        settings = settings if isinstance(settings, MMSettings) else MMSettings()
        fit, engine = _mm_fit(data, K, LossSpec.quadratic(), settings, use_y=False)
        return (fit.params, fit.responsibilities, fit.trajectory, fit.converged, fit.best_start,
                fit.n_starts_run, fit.diagnostics["restarts"])
    raise ValueError(f"unknown clustering mode {mode!r}")


def x_only_fit(data: Dataset, K: int, mode=PARAMETRIC, settings=None) -> tuple:
    """The X-only clustering step: ``(params, responsibilities, trajectory, converged, best_start,
    n_starts_run, restarts)``."""
    return _x_only(data, K, mode, settings)


def cluster_x(data: Dataset, K: int, mode=PARAMETRIC, settings=None) -> np.ndarray:
    """Fuzzy classification of the records from X alone.

    ``mode="parametric"`` fits a diagonal Gaussian mixture by EM;
    ``mode="semiparametric"`` runs the smoothed-likelihood MM on X only.
    Returns the (n, K) responsibilities; ``argmax`` gives the hard rule.
    """
    return _x_only(data, K, mode, settings)[1]


def two_step_fit(data: Dataset, K: int, loss: LossSpec = LossSpec.quadratic(), mode=PARAMETRIC,
                 settings=None, hard=False, clustering=None) -> FitResult:
    """Cluster X, then minimise ``sum_i sum_k r_k(x_i) L(y_i - u_i'gamma - delta_k)``.

    The memberships are not revisited once Y is seen. With ``hard=True``
    each record is assigned wholly to its most probable class.
    ``clustering`` takes the output of ``x_only_fit`` to reuse a clustering
    already computed for the same data and settings.
    """
    params, r, traj, converged, start, runs, restarts = clustering or _x_only(data, K, mode, settings)
    if hard:
        r = np.eye(K)[np.argmax(r, axis=1)]
    coeffs = weighted_loss_fit(data.u, data.y, r, loss)
    resid = coeffs.residuals(data.u, data.y)
    if mode == PARAMETRIC:
        try:
            noise = ParametricNoise.for_loss(loss).weighted_mle_scale(resid, r)
        except ValueError:
            noise = None
        params = replace(params, coeffs=coeffs, noise=noise)
        method = TWO_STEP_PARAMETRIC
    else:
        noise = ContinuousKDE.from_weights(resid.ravel(), r.ravel(), params.h)
        params = replace(params, coeffs=coeffs, noise=noise, noise_smoother=log_smooth(noise), weights=r)
        method = TWO_STEP_SEMIPARAMETRIC
    seed = getattr(settings, "seed", 0)
    return FitResult(method, loss, params, r, traj, converged, len(traj),
                     "loglik_x" if mode == PARAMETRIC else "smoothed_loglik_x", seed, start, runs,
                     {"restarts": restarts, "frozen_responsibilities": True, "hard": hard})
