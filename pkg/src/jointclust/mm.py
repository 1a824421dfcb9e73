"""Semi-parametric joint clustering and regression by maximum smoothed likelihood.

Each class density on X is a product of univariate densities, and the noise
density is left unspecified; both are estimated by weighted kernel density
estimates. The regression coefficients are pinned by the moment condition of
the chosen loss, which amounts to a weighted loss minimisation at every
iteration.

One iteration, from responsibilities ``t``:

1. ``pi_k = mean_i t_ik`` and ``beta = argmin sum t_ik L(y_i - u_i'gamma - delta_k)``;
2. ``f_kj = sum_i t_ik K_h(x_ij - .) / (n pi_k)`` and
   ``f_eps = sum_ik t_ik K_h(y_i - u_i'gamma - delta_k - .) / n``;
3. ``t_ik`` proportional to ``pi_k prod_j (N f_kj)(x_ij) (N f_eps)(resid_ik)``.

The smoothed log-likelihood ``sum_i ln sum_k pi_k (N f_k)(w_i | u_i)`` is
recorded after every iteration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .em import initial_responsibilities, is_degenerate
from .exceptions import DegenerateComponent, InvalidLevel, NonConvergenceWarning
from .kernel import (LOG_FLOOR, CategoricalPMF, ContinuousKDE, KernelConfig, SmoothingBasis,
                     log_smooth, log_smoothed_component_density, select_bandwidth)
from .losses import LossSpec, RegressionCoefficients, loss_derivative, weighted_loss_fit
from .model import SIMULTANEOUS_SEMIPARAMETRIC, FitResult, JointModelParams

LAPLACE_PSEUDOCOUNT = 0.5
MAX_RESTARTS = 3


@dataclass(frozen=True)
class MMSettings:
    max_iter: int = 300
    rel_tol: float = 1e-6
    n_starts: int = 5
    seed: int = 0
    kernel: KernelConfig = KernelConfig()
    standardize: bool = True
    abs_tol: float = 1e-9

    def __post_init__(self):
        if self.max_iter < 1 or self.n_starts < 1:
            raise ValueError("max_iter and n_starts must be at least 1")


@dataclass(frozen=True)
class SemiParamModel(JointModelParams):
    """Fitted semi-parametric joint model.

    ``components[k][j]`` is the density of (standardized) column ``j`` in
    class ``k``: a ContinuousKDE or a CategoricalPMF. ``noise`` is the KDE of
    the weighted residuals. ``x_smoothers`` and ``noise_smoother`` cache the
    log-smoothed densities; ``weights`` holds the responsibilities the
    densities and coefficients were built from.
    """

    x_smoothers: tuple = ()
    noise_smoother: object = None
    x_loc: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x_scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    h: float = 1.0
    weights: np.ndarray | None = None

    def permuted(self, perm):
        perm = np.asarray(perm, dtype=int)
        base = super().permuted(perm)
        return replace(base, x_smoothers=tuple(self.x_smoothers[k] for k in perm),
                       weights=None if self.weights is None else self.weights[:, perm])

    @property
    def d_x(self) -> int:
        return self.x_loc.size

    def standardize(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.d_x)
        return (x - self.x_loc) / self.x_scale

    def log_smoothed_density(self, u, x, y):
        """``ln (N f_k)(w | u)``, shape (n, K)."""
        return log_smoothed_component_density(self.x_smoothers, self.noise_smoother, self.coeffs,
                                              u, self.standardize(x), y)

    def x_log_density(self, x):
        """``ln prod_j f_kj(x_j)`` with the unsmoothed densities, shape (n, K)."""
        xs = self.standardize(x)
        out = np.zeros((xs.shape[0], self.K))
        for k, comp in enumerate(self.components):
            for j, rep in enumerate(comp):
                if isinstance(rep, CategoricalPMF):
                    out[:, k] += rep.logpmf(xs[:, j])
                else:
                    out[:, k] += rep.logpdf(xs[:, j])
        return out

    def posterior_x(self, x):
        lj = np.log(self.pi)[None, :] + self.x_log_density(x)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def responsibilities(self, data: Dataset):
        lj = np.log(self.pi)[None, :] + self.log_smoothed_density(data.u, data.x, data.y)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def location(self, loss: LossSpec) -> float:
        """Location functional of the noise density matched to the loss."""
        f = self.noise
        if loss.kind == "absolute":
            return f.quantile(0.5)
        if loss.kind == "quantile":
            return f.quantile(loss.param)
        if loss.kind == "expectile":
            return f.expectile(loss.param)
        return f.mean()


def _check_levels(data: Dataset, model: SemiParamModel):
    for j, c in enumerate(data.x_columns):
        rep = model.components[0][j]
        if isinstance(rep, CategoricalPMF):
            if c.is_continuous:
                raise InvalidLevel(f"column {c.name!r} was categorical at fit time")
            if c.values.size and c.values.max() >= rep.probs.size:
                raise InvalidLevel(f"column {c.name!r} has a level unseen at fit time")


class _Engine:
    """Precomputed kernel bases and one-hot encodings for repeated iterations."""

    def __init__(self, data: Dataset, K, loss, h, standardize=True, use_y=True):
        self.n, self.K, self.loss, self.h, self.use_y = data.n, K, loss, h, use_y
        self.u, self.y = data.u, data.y
        x = data.x
        mask = data.continuous_mask
        loc = np.zeros(data.d_x)
        scale = np.ones(data.d_x)
        if standardize and mask.any():
            loc[mask] = x[:, mask].mean(axis=0)
            sd = x[:, mask].std(axis=0)
            scale[mask] = np.where(sd > 0, sd, 1.0)
        self.loc, self.scale = loc, scale
        self.xs = (x - loc) / scale
        self.columns = []
        for j, col in enumerate(data.x_columns):
            if col.is_continuous:
                self.columns.append(("c", SmoothingBasis(self.xs[:, j], h)))
            else:
                L = col.cardinality
                self.columns.append(("d", (np.eye(L)[col.values], L)))

    def step(self, t, coeffs=None):
        """Minorization from ``t`` followed by the majorization.

        Returns a dict with the new parameters, the new responsibilities and
        the smoothed log-likelihood at the new parameters.
        """
        n, K = self.n, self.K
        mass = t.sum(axis=0)
        pi = mass / n
        log_s = np.zeros((n, K))
        x_state = []
        dens_w = (t / mass).T
        for kind, obj in self.columns:
            if kind == "c":
                log_f, s = obj.smooth(dens_w)
                log_s += s
                x_state.append(log_f)
            else:
                onehot, L = obj
                probs = (t.T @ onehot + LAPLACE_PSEUDOCOUNT) / (mass[:, None] + LAPLACE_PSEUDOCOUNT * L)
                log_s += np.log(probs[:, np.argmax(onehot, axis=1)].T)
                x_state.append(probs)
        noise_state = None
        if self.use_y:
            coeffs = weighted_loss_fit(self.u, self.y, t, self.loss, init=coeffs)
            resid = coeffs.residuals(self.u, self.y)
            basis = SmoothingBasis(resid.ravel(), self.h)
            log_f_eps, s_eps = basis.smooth(t.ravel() / n)
            log_s += s_eps.reshape(n, K)
            noise_state = (basis, log_f_eps, resid)
        lj = np.log(pi)[None, :] + log_s
        norm = logsumexp(lj, axis=1, keepdims=True)
        t_new = np.exp(lj - norm)
        return {"t_used": t, "pi": pi, "coeffs": coeffs, "x_state": x_state,
                "noise_state": noise_state, "t": t_new, "value": float(norm.sum())}

    def build_model(self, state) -> SemiParamModel:
        t, n, K = state["t_used"], self.n, self.K
        mass = t.sum(axis=0)
        comps, smoothers = [], []
        for k in range(K):
            ck, sk = [], []
            for (kind, obj), st in zip(self.columns, state["x_state"]):
                if kind == "c":
                    kde = ContinuousKDE.from_weights(obj.points, t[:, k], self.h)
                    ck.append(kde)
                    sk.append(log_smooth(kde))
                else:
                    pmf = CategoricalPMF(st[k] / st[k].sum())
                    ck.append(pmf)
                    sk.append(pmf)
            comps.append(tuple(ck))
            smoothers.append(tuple(sk))
        coeffs = state["coeffs"]
        if coeffs is None:
            coeffs = RegressionCoefficients(np.zeros(self.u.shape[1]), np.zeros(K))
        noise, noise_smoother = None, None
        if state["noise_state"] is not None:
            resid = state["noise_state"][2]
            noise = ContinuousKDE.from_weights(resid.ravel(), t.ravel(), self.h)
            noise_smoother = log_smooth(noise)
        return SemiParamModel(mass / n, coeffs, tuple(comps), noise, tuple(smoothers), noise_smoother,
                              self.loc, self.scale, self.h, t)


def run_mm(engine: _Engine, t0, settings: MMSettings, monitor=None):
    """Iterate from responsibilities ``t0`` until the smoothed log-likelihood settles.

    Returns ``(state, trajectory, converged)``.
    """
    t = np.asarray(t0, dtype=float)
    coeffs = None
    traj = []
    state = None
    converged = False
    for _ in range(settings.max_iter):
        if is_degenerate(t):
            raise DegenerateComponent("a component lost its responsibility mass")
        state = engine.step(t, coeffs)
        coeffs, t = state["coeffs"], state["t"]
        traj.append(state["value"])
        if monitor is not None:
            monitor(state)
        if len(traj) > 1:
            change = abs(traj[-1] - traj[-2])
            if change <= settings.rel_tol * abs(traj[-2]) or change <= settings.abs_tol:
                converged = True
                break
    return state, np.array(traj), converged


def _fit(data, K, loss, settings, use_y, init_resp=None, warm_start=True):
    if K < 1:
        raise ValueError("K must be at least 1")
    h = select_bandwidth(data.n, settings.kernel)
    engine = _Engine(data, K, loss, h, settings.standardize, use_y)
    rng = np.random.default_rng(settings.seed)
    best = None
    restarts = 0
    runs = 0
    s = 0
    while s < settings.n_starts:
        if K == 1:
            t0 = np.ones((data.n, 1))
        elif s == 0 and restarts == 0 and init_resp is not None:
            t0 = np.asarray(init_resp, dtype=float)
        elif s == 0 and restarts == 0 and use_y and warm_start:
            x_only = _fit(data, K, loss, replace(settings, n_starts=1), use_y=False)
            t0 = x_only[0].responsibilities
        elif s == 0 and restarts == 0:
            t0 = initial_responsibilities(engine.xs, K, rng, "kmeans")
        else:
            t0 = initial_responsibilities(engine.xs, K, rng, "random")
        try:
            state, traj, converged = run_mm(engine, t0, settings)
            runs += 1
            if K > 1 and np.any(state["pi"] < 1.0 / (10 * K)):
                raise DegenerateComponent("a class weight fell below 1/(10K)")
        except DegenerateComponent:
            if restarts < MAX_RESTARTS:
                restarts += 1
                continue
            s += 1
            continue
        if best is None or traj[-1] > best[2][-1]:
            best = (s, state, traj, converged)
        s += 1
        if K == 1:
            break
    if best is None:
        raise DegenerateComponent("every start ended with a degenerate component")
    start, state, traj, converged = best
    if not converged:
        warnings.warn(f"MM stopped after {settings.max_iter} iterations", NonConvergenceWarning, stacklevel=3)
    model = engine.build_model(state)
    result = FitResult(SIMULTANEOUS_SEMIPARAMETRIC, loss, model, state["t"], traj, converged, len(traj),
                       "smoothed_loglik", settings.seed, start, runs,
                       {"restarts": restarts, "bandwidth": h})
    return result, engine


def mm_fit(data: Dataset, K: int, loss: LossSpec = LossSpec.quadratic(),
           settings: MMSettings = MMSettings(), init_resp=None) -> FitResult:
    """Fit the semi-parametric joint model by the MM algorithm.

    Start 0 is warm-started from the responsibilities of the X-only fit (the
    two-step clustering), or from ``init_resp`` when given; the remaining
    starts are random. The start with the largest final smoothed
    log-likelihood is returned.

    Parameters
    ----------
    data : Dataset
    K : int
    loss : LossSpec
    settings : MMSettings
    init_resp : array (n, K), optional
    """
    if data.d_x < 3:
        warnings.warn("fewer than three proxy variables: the mixture may not be identifiable", stacklevel=2)
    return _fit(data, K, loss, settings, use_y=True, init_resp=init_resp)[0]


def smoothed_loglik(data: Dataset, model: SemiParamModel) -> float:
    """Smoothed log-likelihood ``sum_i ln sum_k pi_k (N f_k)(w_i | u_i)`` of ``data``."""
    _check_levels(data, model)
    lj = np.log(model.pi)[None, :] + model.log_smoothed_density(data.u, data.x, data.y)
    return float(np.sum(logsumexp(lj, axis=1)))


def moment_residual(data: Dataset, model, loss: LossSpec, t=None):
    """Per-class value of ``(1/n) sum_i t_ik rho(y_i - u_i'gamma - delta_k)``.

    ``t`` defaults to the responsibilities the model's coefficients were
    fitted with when ``data`` is the training sample, and to the model
    posterior otherwise.
    """
    if t is None:
        w = getattr(model, "weights", None)
        if w is not None and w.shape[0] == data.n:
            t = w
        elif isinstance(model, SemiParamModel):
            t = model.responsibilities(data)
        else:
            from .em import e_step
            t = e_step(model, data.u, data.x, data.y)[0]
    t = np.asarray(t, dtype=float)
    rho = loss_derivative(loss, model.coeffs.residuals(data.u, data.y))
    return np.sum(t * rho, axis=0) / data.n


def predict(model, u, x, loss: LossSpec = LossSpec.quadratic()):
    """Predict ``y`` from ``(u, x)`` alone.

    Classes are weighted by their posterior given ``x`` (``y`` is unknown at
    prediction time) and the loss-matched location of the noise is added.
    """
    w = model.posterior_x(x)
    n = w.shape[0]
    u = np.asarray(u, dtype=float)
    u = np.zeros((n, 0)) if u.size == 0 else u.reshape(n, -1)
    shift = model.location(loss) if isinstance(model, SemiParamModel) else 0.0
    return u @ model.coeffs.gamma + w @ model.coeffs.delta + shift


def select_k(data: Dataset, k_range, loss: LossSpec = LossSpec.quadratic(),
             settings: MMSettings = MMSettings(), n_folds=5):
    """Smoothed log-likelihood and cross-validated prediction MSE for each K.

    Returns a list of dicts with keys ``K``, ``smoothed_loglik``, ``cv_mse``
    and ``error`` (None on success). Folds are shuffled with ``settings.seed``.
    """
    from sklearn.model_selection import KFold

    k_range = list(k_range)
    if not k_range:
        raise ValueError("k_range is empty")
    folds = list(KFold(n_folds, shuffle=True, random_state=settings.seed).split(np.arange(data.n)))
    rows = []
    for K in k_range:
        row = {"K": int(K), "smoothed_loglik": float("nan"), "cv_mse": float("nan"), "error": None}
        try:
            fit = mm_fit(data, K, loss, settings)
            row["smoothed_loglik"] = fit.final_objective
            sq = np.zeros(data.n)
            for train, test in folds:
                tr, te = data.subset(train), data.subset(test)
                f = mm_fit(tr, K, loss, settings)
                sq[test] = (te.y - predict(f.params, te.u, te.x, loss)) ** 2
            row["cv_mse"] = float(sq.mean())
        except Exception as exc:  # recorded, not fatal
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def elbow_k(ks, values):
    """K after which the gain in ``values`` drops the most.

    Uses the largest decrease between successive gains
    ``g_K = values[K] - values[K-1]``; with fewer than three K the larger
    value wins. NaN entries are ignored.
    """
    pairs = sorted((int(k), float(v)) for k, v in zip(ks, values) if np.isfinite(v))
    if not pairs:
        return None
    if len(pairs) < 3:
        return max(pairs, key=lambda p: p[1])[0]
    ks_, vs = zip(*pairs)
    gains = np.diff(vs)
    drops = gains[:-1] - gains[1:]
    return ks_[1 + int(np.argmax(drops))]


__all__ = ["MMSettings", "elbow_k", "SemiParamModel", "mm_fit", "run_mm", "smoothed_loglik", "moment_residual",
           "predict", "select_k", "LOG_FLOOR"]
