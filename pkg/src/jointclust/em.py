"""Maximum likelihood for the fully parametric joint model by EM.

Classes have diagonal Gaussian densities on X; the regression error follows a
family matched to the loss: Gaussian (mean regression), asymmetric Laplace
(quantile regression) or asymmetric normal (expectile regression).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .exceptions import DegenerateComponent, UnsupportedColumnType
from .losses import LossSpec, RegressionCoefficients, loss_value, weighted_loss_fit
from .model import (SIMULTANEOUS_PARAMETRIC, FitResult, JointModelParams)

VARIANCE_FLOOR = 1e-8
MAX_RESTARTS = 3

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

GAUSSIAN = "gaussian"
ASYMMETRIC_LAPLACE = "asymmetric_laplace"
ASYMMETRIC_NORMAL = "asymmetric_normal"
_FAMILIES = (GAUSSIAN, ASYMMETRIC_LAPLACE, ASYMMETRIC_NORMAL)


@dataclass(frozen=True)
class GaussianComponent:
    """Diagonal Gaussian density of X within one class."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float).ravel())
        v = np.maximum(np.asarray(self.variances, dtype=float).ravel(), VARIANCE_FLOOR)
        object.__setattr__(self, "variances", v)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.means.size)
        z2 = (x - self.means) ** 2 / self.variances
        return -0.5 * np.sum(z2 + np.log(self.variances), axis=1) - self.means.size * _LOG_SQRT_2PI

    @classmethod
    def weighted_mle(cls, x, w):
        mass = w.sum()
        mu = w @ x / mass
        var = w @ (x - mu) ** 2 / mass
        return cls(mu, var)


@dataclass(frozen=True)
class ParametricNoise:
    """Noise density with location fixed at zero.

    ``scale`` is the standard deviation for the Gaussian family and the
    scale parameter of the asymmetric families.
    """

    family: str = GAUSSIAN
    scale: float = 1.0
    tau: float | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if not self.scale > 0:
            raise ValueError("noise scale must be positive")
        if self.family != GAUSSIAN and not (self.tau is not None and 0 < self.tau < 1):
            raise ValueError("asymmetric noise needs tau in (0, 1)")

    @classmethod
    def for_loss(cls, loss: LossSpec, scale=1.0) -> "ParametricNoise":
        """The family whose MLE of the regression coincides with the loss minimiser."""
        if loss.kind == "quadratic":
            return cls(GAUSSIAN, scale)
        if loss.kind in ("quantile", "absolute"):
            return cls(ASYMMETRIC_LAPLACE, scale, loss.tau)
        if loss.kind == "expectile":
            return cls(ASYMMETRIC_NORMAL, scale, loss.tau)
        raise ValueError(f"no parametric noise family for {loss} loss")

    @property
    def loss(self) -> LossSpec:
        if self.family == GAUSSIAN:
            return LossSpec.quadratic()
        if self.family == ASYMMETRIC_LAPLACE:
            return LossSpec.quantile(self.tau)
        return LossSpec.expectile(self.tau)

    def logpdf(self, e):
        e = np.asarray(e, dtype=float)
        s = self.scale
        if self.family == GAUSSIAN:
            return -0.5 * (e / s) ** 2 - math.log(s) - _LOG_SQRT_2PI
        tau = self.tau
        if self.family == ASYMMETRIC_LAPLACE:
            return math.log(tau * (1 - tau)) - math.log(s) - loss_value(self.loss, e) / s
        norm = math.log(2.0) - math.log(s) - _LOG_SQRT_2PI - math.log(1 / math.sqrt(tau) + 1 / math.sqrt(1 - tau))
        return norm - loss_value(self.loss, e) / (2 * s * s)

    def weighted_mle_scale(self, resid, t) -> "ParametricNoise":
        """Scale maximising ``sum t_ik ln f(resid_ik)`` with the location held at zero."""
        mass = t.sum()
        if self.family == GAUSSIAN:
            s = math.sqrt(float(np.sum(t * resid ** 2)) / mass)
        elif self.family == ASYMMETRIC_LAPLACE:
            s = float(np.sum(t * loss_value(self.loss, resid))) / mass
        else:
            s = math.sqrt(float(np.sum(t * loss_value(self.loss, resid))) / mass)
        return replace(self, scale=max(s, math.sqrt(VARIANCE_FLOOR)))


@dataclass(frozen=True)
class EMSettings:
    max_iter: int = 500
    rel_tol: float = 1e-8
    n_starts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1 or self.n_starts < 1:
            raise ValueError("max_iter and n_starts must be at least 1")


@dataclass(frozen=True)
class ParametricModel(JointModelParams):
    """Joint model with Gaussian classes on X and a parametric noise density."""

    def x_log_density(self, x):
        """``ln f_k(x)`` for each record and class, shape (n, K)."""
        return np.column_stack([c.logpdf(x) for c in self.components])

    def log_joint(self, u, x, y):
        """``ln pi_k + ln f_k(x) + ln f_eps(y - u'gamma - delta_k)``, shape (n, K)."""
        out = np.log(self.pi)[None, :] + self.x_log_density(x)
        if self.noise is not None:
            out = out + self.noise.logpdf(self.coeffs.residuals(u, y))
        return out

    def posterior_x(self, x):
        lj = np.log(self.pi)[None, :] + self.x_log_density(x)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def predict(self, u, x):
        """Posterior-on-X weighted average of the class regressions."""
        w = self.posterior_x(x)
        n = w.shape[0]
        u = np.asarray(u, dtype=float).reshape(n, -1) if np.size(u) else np.zeros((n, 0))
        return u @ self.coeffs.gamma + w @ self.coeffs.delta


def _continuous_x(data: Dataset) -> np.ndarray:
    if not data.all_continuous:
        raise UnsupportedColumnType("the parametric estimator needs all X columns continuous")
    return data.x


def em_loglik(data: Dataset, params: ParametricModel, noise_family=None) -> float:
    """Observed-data log-likelihood of (Y, X) given U.

    ``noise_family`` overrides ``params.noise`` when given.
    """
    if noise_family is not None:
        params = replace(params, noise=noise_family)
    x = _continuous_x(data)
    return float(np.sum(logsumexp(params.log_joint(data.u, x, data.y), axis=1)))


def e_step(params: ParametricModel, u, x, y, use_y=True):
    """Responsibilities and log-likelihood at ``params``."""
    if use_y:
        lj = params.log_joint(u, x, y)
    else:
        lj = np.log(params.pi)[None, :] + params.x_log_density(x)
    norm = logsumexp(lj, axis=1, keepdims=True)
    return np.exp(lj - norm), float(norm.sum())


def m_step(t, u, x, y, noise: ParametricNoise | None, coeffs=None):
    """Maximise the expected complete-data log-likelihood given responsibilities ``t``."""
    n, K = t.shape
    mass = t.sum(axis=0)
    pi = mass / n
    comps = tuple(GaussianComponent.weighted_mle(x, t[:, k]) for k in range(K))
    if noise is None:
        d_u = np.shape(u)[1] if np.ndim(u) == 2 else 0
        return ParametricModel(pi, RegressionCoefficients(np.zeros(d_u), np.zeros(K)), comps, None)
    coeffs = weighted_loss_fit(u, y, t, noise.loss, init=coeffs)
    noise = noise.weighted_mle_scale(coeffs.residuals(u, y), t)
    return ParametricModel(pi, coeffs, comps, noise)


def initial_responsibilities(x, K, rng, kind="random"):
    """Starting responsibilities from standardized X.

    ``kind="kmeans"`` gives the hard k-means partition; ``"random"`` draws
    ``K`` distinct records as centres and assigns soft memberships by distance.
    """
    n = x.shape[0]
    sd = x.std(axis=0)
    z = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    if K == 1:
        return np.ones((n, 1))
    if kind == "kmeans":
        from sklearn.cluster import KMeans

        labels = KMeans(K, n_init=1, random_state=int(rng.integers(2**31 - 1))).fit_predict(z)
        return np.eye(K)[labels]
    centres = z[rng.choice(n, size=K, replace=False)]
    d2 = ((z[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
    logits = -0.5 * d2
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def is_degenerate(t) -> bool:
    n, K = t.shape
    return bool(np.any(t.sum(axis=0) < 1e-3 * K))


def run_em(u, x, y, t0, noise, settings: EMSettings, use_y=True):
    """One EM run from responsibilities ``t0``.

    Returns ``(params, t, trajectory, converged)``; raises DegenerateComponent
    when a class loses its mass.
    """
    t = t0
    coeffs = None
    traj = []
    converged = False
    params = None
    for _ in range(settings.max_iter):
        if is_degenerate(t):
            raise DegenerateComponent("a component lost its responsibility mass")
        params = m_step(t, u, x, y, noise if use_y else None, coeffs)
        coeffs = params.coeffs
        noise = params.noise if use_y else noise
        t, ll = e_step(params, u, x, y, use_y)
        traj.append(ll)
        if len(traj) > 1 and abs(traj[-1] - traj[-2]) <= settings.rel_tol * abs(traj[-2]):
            converged = True
            break
    return params, t, np.array(traj), converged


def multi_start(x, K, settings, run, init_resp=None):
    """Run ``run(t0)`` from several starts and keep the best final objective.

    Start 0 is the k-means partition (or ``init_resp``), the rest are random.
    A degenerate start is replaced by a fresh random one, at most
    ``MAX_RESTARTS`` times in total.
    """
    rng = np.random.default_rng(settings.seed)
    best = None
    restarts = 0
    runs = 0
    s = 0
    while s < settings.n_starts:
        if s == 0 and restarts == 0 and init_resp is not None:
            t0 = np.asarray(init_resp, dtype=float)
        else:
            t0 = initial_responsibilities(x, K, rng, "kmeans" if s == 0 and restarts == 0 else "random")
        try:
            out = run(t0)
            runs += 1
        except DegenerateComponent:
            if restarts >= MAX_RESTARTS:
                s += 1
                continue
            restarts += 1
            continue
        if best is None or out[2][-1] > best[1][2][-1]:
            best = (s, out)
        s += 1
    if best is None:
        raise DegenerateComponent("every start ended with a degenerate component")
    return best[0], best[1], runs, restarts


def em_fit(data: Dataset, K: int, noise_family="gaussian", settings: EMSettings = EMSettings(),
           tau=None, init_resp=None) -> FitResult:
    """Fit the parametric joint model by EM with multiple starts.

    Parameters
    ----------
    data : Dataset
        All X columns must be continuous.
    K : int
    noise_family : str, ParametricNoise or LossSpec
        ``"gaussian"``, ``"asymmetric_laplace"`` or ``"asymmetric_normal"``;
        a LossSpec selects the matched family.
    settings : EMSettings
    tau : float, optional
        Asymmetry level for the asymmetric families.
    init_resp : array (n, K), optional
        Responsibilities for the first start (replaces k-means).
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    x = _continuous_x(data)
    noise = _as_noise(noise_family, tau)
    u, y = data.u, data.y

    def run(t0):
        return run_em(u, x, y, t0, noise, settings)

    start, (params, t, traj, converged), runs, restarts = multi_start(x, K, settings, run, init_resp)
    return FitResult(SIMULTANEOUS_PARAMETRIC, noise.loss, params, t, traj, converged, len(traj),
                     "loglik", settings.seed, start, runs,
                     {"restarts": restarts, "noise_family": noise.family})


def _as_noise(noise_family, tau=None) -> ParametricNoise:
    if isinstance(noise_family, ParametricNoise):
        return noise_family
    if isinstance(noise_family, LossSpec):
        return ParametricNoise.for_loss(noise_family)
    if noise_family == GAUSSIAN:
        return ParametricNoise(GAUSSIAN)
    return ParametricNoise(noise_family, 1.0, tau)
