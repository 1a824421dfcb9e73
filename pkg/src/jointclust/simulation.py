"""Synthetic designs with known truth: data generators, class-overlap calibration, Bayes rules.

All designs have two equiprobable classes, four proxy variables
``X_ij = -xi + eta_ij`` (class 0) or ``+xi + eta_ij`` (class 1), two standard
normal covariates, and ``Y = delta_z + U'gamma + eps`` with
``delta = (-1, 1)`` and ``gamma = (1, 1)``.

========  ==================  =====================
design    eta                 eps
========  ==================  =====================
case1     N(0, 1)             N(0, 1)
case2     N(0, 1)             Exp(1) - 1
case3     Student t(3)        N(0, 1)
case4     Student t(3)        Student t(3)
student3  Student t(3)        Student t(3)
asym      N(0, 1)             N(-c_tau, 1)
========  ==================  =====================

``xi`` is tuned so that the Bayes classifier on X alone errs 10% of the time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats
from scipy.optimize import brentq
from scipy.special import logsumexp, ndtr, ndtri

from .data import Dataset, categorical, continuous
from .exceptions import NoRoot
from .losses import LossSpec

CASES = ("case1", "case2", "case3", "case4", "student3", "asym")
GAUSSIAN = "gaussian"
STUDENT3 = "student3"
EXP_CENTERED = "exp_centered"

D_X = 4
PI = (0.5, 0.5)
DELTA = (-1.0, 1.0)
GAMMA = (1.0, 1.0)
TARGET_ERROR = 0.10

_ETA = {"case1": GAUSSIAN, "case2": GAUSSIAN, "case3": STUDENT3, "case4": STUDENT3,
        "student3": STUDENT3, "asym": GAUSSIAN}
_EPS = {"case1": GAUSSIAN, "case2": EXP_CENTERED, "case3": GAUSSIAN, "case4": STUDENT3,
        "student3": STUDENT3, "asym": GAUSSIAN}


def _logpdf(family, a):
    if family == GAUSSIAN:
        return stats.norm.logpdf(a)
    if family == STUDENT3:
        return stats.t.logpdf(a, 3)
    if family == EXP_CENTERED:
        with np.errstate(divide="ignore"):
            return np.where(np.asarray(a) > -1, -(np.asarray(a) + 1.0), -np.inf)
    raise ValueError(f"unknown family {family!r}")


def _draw(family, rng, size):
    if family == GAUSSIAN:
        return rng.standard_normal(size)
    if family == STUDENT3:
        return rng.standard_t(3, size)
    if family == EXP_CENTERED:
        return rng.exponential(1.0, size) - 1.0
    raise ValueError(f"unknown family {family!r}")


def compute_c_tau(target: LossSpec) -> float:
    """The tau-quantile or tau-expectile of the standard normal distribution."""
    tau = target.param
    if target.kind == "quantile":
        return float(ndtri(tau))
    if target.kind == "expectile":
        def gap(e):
            pdf = math.exp(-0.5 * e * e) / math.sqrt(2 * math.pi)
            cdf = float(ndtr(e))
            upper = pdf - e * (1 - cdf)      # E (X - e)_+
            lower = pdf + e * cdf            # E (e - X)_+
            return tau * upper - (1 - tau) * lower
        return float(brentq(gap, -10.0, 10.0, xtol=1e-14))
    raise ValueError("c_tau is defined for quantile and expectile targets")


def _ratio_error(family, xi, eta):
    # Bayes error with equal priors: 0.5 * E_{f_0}[min(1, f_1 / f_0)].
    x = -xi + eta
    log_ratio = np.sum(_logpdf(family, x - xi) - _logpdf(family, x + xi), axis=1)
    return 0.5 * float(np.mean(np.exp(np.minimum(log_ratio, 0.0))))


def bayes_error_x(family, xi, d_x=D_X, n_mc=10**6, seed=12345) -> float:
    """Misclassification rate of the Bayes rule on X for separation ``xi``."""
    if family == GAUSSIAN:
        return float(ndtr(-xi * math.sqrt(d_x)))
    eta = _draw(family, np.random.default_rng(seed), (n_mc, d_x))
    return _ratio_error(family, xi, eta)


@lru_cache(maxsize=None)
def calibrate_xi(eta_family=GAUSSIAN, target_error=TARGET_ERROR, d_x=D_X, n_mc=10**6, seed=12345) -> float:
    """Class separation giving the requested Bayes misclassification of the X-only rule.

    Closed form for Gaussian noise; otherwise the error is estimated on a
    fixed set of ``n_mc`` draws (common random numbers) and the root found
    by Brent's method.
    """
    if not 0 < target_error < 0.5:
        raise NoRoot("target error must lie in (0, 0.5)")
    if eta_family == GAUSSIAN:
        return float(ndtri(1 - target_error) / math.sqrt(d_x))
    eta = _draw(eta_family, np.random.default_rng(seed), (n_mc, d_x))
    lo, hi = 1e-6, 10.0
    f_lo = _ratio_error(eta_family, lo, eta) - target_error
    f_hi = _ratio_error(eta_family, hi, eta) - target_error
    if f_lo * f_hi > 0:
        raise NoRoot(f"target error {target_error} not reachable for xi in [{lo}, {hi}]")
    return float(brentq(lambda xi: _ratio_error(eta_family, xi, eta) - target_error, lo, hi, xtol=1e-10))


@dataclass(frozen=True)
class SimDesign:
    """One synthetic experiment.

    Parameters
    ----------
    case : str
        One of ``CASES``.
    n : int
    seed : int
    loss_target : LossSpec, optional
        Quantile or expectile level defining ``c_tau`` for the ``asym`` case.
    xi : float, optional
        Class separation; calibrated to a 10% Bayes error when omitted.
    """

    case: str
    n: int
    seed: int = 0
    loss_target: LossSpec | None = None
    xi: float | None = None
    delta: tuple = field(default=DELTA)
    gamma: tuple = field(default=GAMMA)
    pi: tuple = field(default=PI)

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}")
        if self.n < 50:
            raise ValueError("designs need n >= 50")
        if self.case == "asym" and (self.loss_target is None
                                    or self.loss_target.kind not in ("quantile", "expectile")):
            raise ValueError("the asym case needs a quantile or expectile loss_target")
        if self.xi is None:
            object.__setattr__(self, "xi", calibrate_xi(_ETA[self.case]))
        if not self.xi > 0:
            raise ValueError("xi must be positive")

    @property
    def K(self) -> int:
        return 2

    @property
    def eta_family(self) -> str:
        return _ETA[self.case]

    @property
    def eps_family(self) -> str:
        return _EPS[self.case]

    @property
    def eps_shift(self) -> float:
        return -compute_c_tau(self.loss_target) if self.case == "asym" else 0.0

    @property
    def beta(self) -> np.ndarray:
        """True coefficients stacked as ``(gamma, delta)``."""
        return np.concatenate([self.gamma, self.delta])

    @property
    def class_means(self) -> np.ndarray:
        return np.array([-self.xi, self.xi])

    def with_seed(self, seed) -> "SimDesign":
        return SimDesign(self.case, self.n, seed, self.loss_target, self.xi, self.delta, self.gamma, self.pi)

    def with_n(self, n) -> "SimDesign":
        return SimDesign(self.case, n, self.seed, self.loss_target, self.xi, self.delta, self.gamma, self.pi)

    def to_dict(self):
        return {"case": self.case, "n": self.n, "seed": self.seed, "xi": self.xi,
                "loss_target": None if self.loss_target is None else str(self.loss_target)}


def generate(design: SimDesign) -> Dataset:
    """Draw ``design.n`` records; deterministic in ``design.seed``."""
    rng = np.random.default_rng(design.seed)
    n = design.n
    z = rng.choice(2, size=n, p=design.pi)
    eta = _draw(design.eta_family, rng, (n, D_X))
    u = rng.standard_normal((n, 2))
    eps = _draw(design.eps_family, rng, n) + design.eps_shift
    x = design.class_means[z][:, None] + eta
    y = np.asarray(design.delta)[z] + u @ np.asarray(design.gamma) + eps
    cols = tuple(continuous(f"x{j + 1}", x[:, j]) for j in range(D_X))
    return Dataset(u, cols, y, z, ("u1", "u2"), "y")


class BayesRules:
    """True posterior rules and the optimal predictor of a design."""

    def __init__(self, design: SimDesign):
        self.design = design

    def _log_x(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, D_X)
        fam = self.design.eta_family
        return np.column_stack([np.sum(_logpdf(fam, x - m), axis=1) for m in self.design.class_means]) \
            + np.log(self.design.pi)

    def x_rule(self, x):
        """``P(Z = k | X = x)``, shape (n, 2)."""
        lj = self._log_x(x)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def xy_rule(self, u, x, y):
        """``P(Z = k | X = x, Y = y, U = u)``, shape (n, 2)."""
        d = self.design
        resid = (np.asarray(y, dtype=float) - np.asarray(u) @ np.asarray(d.gamma))[:, None] \
            - np.asarray(d.delta)[None, :] - d.eps_shift
        lj = self._log_x(x) + _logpdf(d.eps_family, resid)
        with np.errstate(invalid="ignore"):
            norm = logsumexp(lj, axis=1, keepdims=True)
            return np.exp(lj - norm)

    def optimal_predictor(self, u, x):
        """``E[Y | U = u, X = x]``."""
        d = self.design
        mean_eps = d.eps_shift  # all noise families are centred before the shift
        return np.asarray(u) @ np.asarray(d.gamma) + self.x_rule(x) @ np.asarray(d.delta) + mean_eps


def bayes_rules(design: SimDesign):
    """``(x_rule, xy_rule, optimal_predictor)`` callables for ``design``."""
    r = BayesRules(design)
    return r.x_rule, r.xy_rule, r.optimal_predictor


# Mixed-type design used for end-to-end workflow checks: three classes,
# two continuous and three categorical proxies, one binary covariate.
MIXED_PI = (0.3, 0.4, 0.3)
MIXED_DELTA = (-1.5, 0.0, 1.5)
MIXED_GAMMA = (0.8, -0.5)
MIXED_MEANS = ((-1.5, 1.0), (0.0, -1.0), (1.5, 1.0))
MIXED_PMFS = (
    ((0.8, 0.2), (0.3, 0.7), (0.5, 0.5)),
    ((0.6, 0.3, 0.1), (0.1, 0.3, 0.6), (0.2, 0.6, 0.2)),
    ((0.7, 0.1, 0.1, 0.1), (0.1, 0.7, 0.1, 0.1), (0.1, 0.1, 0.1, 0.7)),
)


def generate_mixed(n: int, seed: int = 0) -> Dataset:
    """Mixed continuous/categorical proxies with known class masses (see ``MIXED_*``)."""
    rng = np.random.default_rng(seed)
    z = rng.choice(3, size=n, p=MIXED_PI)
    means = np.asarray(MIXED_MEANS)[z]
    xc = means + rng.standard_normal((n, 2))
    cols = [continuous("activity_minutes", xc[:, 0]), continuous("sedentary_hours", xc[:, 1])]
    names = ("walk_or_bike", "tv_level", "work_activity")
    for name, pmfs in zip(names, MIXED_PMFS):
        p = np.asarray(pmfs)[z]
        codes = (rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
        cols.append(categorical(name, codes, tuple(f"L{i}" for i in range(p.shape[1]))))
    u = np.column_stack([rng.integers(0, 2, n).astype(float), rng.standard_normal(n)])
    y = np.asarray(MIXED_DELTA)[z] + u @ np.asarray(MIXED_GAMMA) + rng.standard_normal(n)
    return Dataset(u, tuple(cols), y, z, ("gender", "age_std"), "pressure")
