"""Regression losses, their derivatives, and weighted fits over soft class memberships.

Every model in the package regresses ``y`` on ``(u, z)`` with a class-specific
intercept ``delta[k]`` and shared slopes ``gamma``. When class membership is
only known through responsibilities ``t[i, k]`` the fit is performed on the
expanded design: every record is replicated once per class, with weight
``t[i, k]`` and a class-indicator column in place of the intercept.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .exceptions import NonConvergenceWarning, SingularDesign

__all__ = [
    "LossSpec",
    "RegressionCoefficients",
    "loss_value",
    "loss_derivative",
    "weighted_loss",
    "weighted_loss_fit",
    "expanded_design",
]

_KINDS = ("quadratic", "absolute", "huber", "logcosh", "quantile", "expectile")
_PARAM_KINDS = {"huber": "c", "quantile": "tau", "expectile": "tau"}


@dataclass(frozen=True)
class LossSpec:
    """A regression loss.

    Parameters
    ----------
    kind : str
        One of ``quadratic``, ``absolute``, ``huber``, ``logcosh``,
        ``quantile``, ``expectile``.
    param : float, optional
        Threshold ``c`` for Huber, level ``tau`` for quantile and expectile.
    """

    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind in _PARAM_KINDS:
            if self.param is None:
                raise ValueError(f"{self.kind} loss needs a parameter")
            p = float(self.param)
            if self.kind == "huber" and not p > 0:
                raise ValueError("Huber threshold must be positive")
            if self.kind in ("quantile", "expectile") and not 0 < p < 1:
                raise ValueError("tau must lie strictly inside (0, 1)")
            object.__setattr__(self, "param", p)
        elif self.param is not None:
            raise ValueError(f"{self.kind} loss takes no parameter")

    @classmethod
    def quadratic(cls):
        return cls("quadratic")

    @classmethod
    def absolute(cls):
        return cls("absolute")

    @classmethod
    def huber(cls, c=1.0):
        return cls("huber", c)

    @classmethod
    def logcosh(cls):
        return cls("logcosh")

    @classmethod
    def quantile(cls, tau):
        return cls("quantile", tau)

    @classmethod
    def expectile(cls, tau):
        return cls("expectile", tau)

    @classmethod
    def parse(cls, text: str) -> "LossSpec":
        """Parse ``"huber(1)"``, ``"quantile(0.75)"``, ``"quadratic"`` and the like."""
        m = re.fullmatch(r"\s*([a-z]+)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*", text)
        if m is None:
            raise ValueError(f"cannot parse loss {text!r}")
        kind, param = m.group(1), m.group(2)
        if kind == "median":
            kind = "absolute"
        return cls(kind, None if param is None else float(param))

    @property
    def tau(self) -> float:
        if self.kind in ("quantile", "expectile"):
            return self.param
        if self.kind == "absolute":
            return 0.5
        raise AttributeError(f"{self.kind} loss has no tau")

    @property
    def is_piecewise_linear(self) -> bool:
        return self.kind in ("absolute", "quantile")

    def __str__(self):
        if self.param is None:
            return self.kind
        return f"{self.kind}({self.param:g})"


@dataclass(frozen=True)
class RegressionCoefficients:
    """Shared slopes ``gamma`` (one per column of U) and per-class intercepts ``delta``.

    There is no separate intercept: ``delta`` plays that role for each class.
    """

    gamma: np.ndarray
    delta: np.ndarray
    converged: bool = field(default=True, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)).ravel())
        object.__setattr__(self, "delta", np.atleast_1d(np.asarray(self.delta, dtype=float)).ravel())
        if self.delta.size < 1:
            raise ValueError("need at least one class intercept")

    @property
    def K(self) -> int:
        return self.delta.size

    @property
    def vector(self) -> np.ndarray:
        """Coefficients stacked as ``(gamma, delta)``."""
        return np.concatenate([self.gamma, self.delta])

    @classmethod
    def from_vector(cls, beta, d_u, converged=True):
        beta = np.asarray(beta, dtype=float)
        return cls(beta[:d_u], beta[d_u:], converged=converged)

    def permuted(self, perm) -> "RegressionCoefficients":
        """Relabel classes: new class ``k`` is old class ``perm[k]``."""
        return RegressionCoefficients(self.gamma, self.delta[np.asarray(perm)], self.converged)

    def residuals(self, u, y) -> np.ndarray:
        """Matrix of ``y_i - u_i'gamma - delta_k``, shape (n, K)."""
        u = as_matrix(u, len(y))
        return (np.asarray(y, dtype=float) - u @ self.gamma)[:, None] - self.delta[None, :]


def loss_value(spec: LossSpec, t):
    """Loss evaluated at residual(s) ``t``.

    The quantile loss is the check function ``t * (tau - 1{t <= 0})``, which is
    nonnegative and vanishes at zero.
    """
    t = np.asarray(t, dtype=float)
    kind = spec.kind
    if kind == "quadratic":
        out = t * t
    elif kind == "absolute":
        out = np.abs(t)
    elif kind == "huber":
        c = spec.param
        a = np.abs(t)
        out = np.where(a <= c, 0.5 * t * t, c * a - 0.5 * c * c)
    elif kind == "logcosh":
        a = np.abs(t)
        # cosh(t) - 1 = 2 sinh(t/2)^2 keeps small residuals exact; the second form avoids overflow
        small = np.minimum(a, 20.0)
        out = np.where(a < 20.0, np.log1p(2.0 * np.sinh(0.5 * small) ** 2),
                       a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0))
    elif kind == "quantile":
        out = t * (spec.param - (t <= 0))
    else:  # expectile
        out = np.abs(spec.param - (t <= 0)) * t * t
    return out[()] if out.ndim == 0 else out


def loss_derivative(spec: LossSpec, t):
    """Piecewise derivative of the loss.

    At the kink of the absolute and quantile losses the indicator ``1{t <= 0}``
    includes equality, so the left limit is returned.
    """
    t = np.asarray(t, dtype=float)
    kind = spec.kind
    if kind == "quadratic":
        out = 2.0 * t
    elif kind == "absolute":
        out = 1.0 - 2.0 * (t <= 0)
    elif kind == "huber":
        out = np.clip(t, -spec.param, spec.param)
    elif kind == "logcosh":
        out = np.tanh(t)
    elif kind == "quantile":
        out = spec.param - (t <= 0).astype(float)
    else:
        tau = spec.param
        out = 2.0 * t * np.where(t <= 0, 1.0 - tau, tau)
    return out[()] if out.ndim == 0 else out


def as_matrix(u, n) -> np.ndarray:
    """Covariates as an (n, d_U) float array; ``d_U`` may be zero."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        return np.zeros((n, 0))
    return u.reshape(n, -1)


def expanded_design(u, K):
    """Design on the (n*K)-row expansion, rows ordered ``(i, k)`` with k fastest.

    Returns an array of shape (n*K, d_U + K) whose row ``(i, k)`` is
    ``(u_i, e_k)``.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    u = as_matrix(u, n)
    d_u = u.shape[1]
    design = np.zeros((n, K, d_u + K))
    design[:, :, :d_u] = u[:, None, :]
    design[:, np.arange(K), d_u + np.arange(K)] = 1.0
    return design.reshape(n * K, d_u + K)


def weighted_loss(spec, u, y, t, coeffs) -> float:
    """Objective ``sum_i sum_k t_ik L(y_i - u_i'gamma - delta_k)``."""
    r = coeffs.residuals(u, y)
    return float(np.sum(np.asarray(t) * loss_value(spec, r)))


def _wls(design, response, weights):
    _wls_check(design, weights)
    sw = np.sqrt(weights)
    a = design * sw[:, None]
    return np.linalg.solve(a.T @ a, a.T @ (response * sw))


def _quantile_lp(design, response, weights, tau):
    # Dual of weighted check-loss regression: max y'a, X'a = 0, -(1-tau)w <= a <= tau w.
    p = design.shape[1]
    bounds = np.column_stack([-(1.0 - tau) * weights, tau * weights])
    res = linprog(-response, A_eq=design.T, b_eq=np.zeros(p), bounds=bounds, method="highs")
    if res.status != 0:
        raise SingularDesign(f"quantile program failed: {res.message}")
    return -np.asarray(res.eqlin.marginals)


def weighted_loss_fit(u, y, t, spec: LossSpec, init: RegressionCoefficients | None = None,
                      max_iter=200, tol=1e-10) -> RegressionCoefficients:
    """Minimise ``sum_i sum_k t_ik L(y_i - u_i'gamma - delta_k)`` over (gamma, delta).

    Quadratic loss has the closed-form weighted least squares solution.
    Absolute and quantile losses are solved exactly as a linear program.
    Huber, logcosh and expectile use iteratively reweighted least squares with
    a backtracking safeguard, so the objective never increases from ``init``.

    Parameters
    ----------
    u : array (n, d_U)
    y : array (n,)
    t : array (n, K)
        Class weights; rows are expected to sum to one.
    spec : LossSpec
    init : RegressionCoefficients, optional
        Starting point of the iterative solvers. The returned coefficients
        never have a larger objective than ``init``.

    Raises
    ------
    SingularDesign
        If the weighted normal-equation matrix is rank-deficient.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    t = np.asarray(t, dtype=float).reshape(n, -1)
    K = t.shape[1]
    u = as_matrix(u, n)
    d_u = u.shape[1]

    design = expanded_design(u, K)
    response = np.repeat(y, K)
    weights = t.ravel()
    keep = weights > 0
    design, response, weights = design[keep], response[keep], weights[keep]

    def objective(beta):
        return float(np.sum(weights * loss_value(spec, response - design @ beta)))

    converged = True
    if spec.kind == "quadratic":
        beta = _wls(design, response, weights)
    elif spec.is_piecewise_linear:
        _wls_check(design, weights)
        beta = _quantile_lp(design, response, weights, spec.tau)
    else:
        if init is None:
            beta = _wls(design, response, weights)
        else:
            _wls_check(design, weights)
            beta = init.vector.copy()
        f = objective(beta)
        converged = False
        for _ in range(max_iter):
            r = response - design @ beta
            safe = np.where(np.abs(r) < 1e-8, np.where(r < 0, -1e-8, 1e-8), r)
            irls_w = loss_derivative(spec, safe) / safe
            proposal = _wls(design, response, weights * irls_w)
            step = proposal - beta
            f_new = objective(proposal)
            shrink = 0
            while f_new > f and shrink < 40:
                step *= 0.5
                proposal = beta + step
                f_new = objective(proposal)
                shrink += 1
            if f_new > f:
                converged = True
                break
            done = f - f_new <= tol * max(1.0, abs(f)) and np.max(np.abs(step)) <= 1e-9 * (1 + np.max(np.abs(beta)))
            beta, f = proposal, f_new
            if done or np.max(np.abs(step)) <= 1e-12:
                converged = True
                break
        if not converged:
            warnings.warn(f"{spec} weighted fit stopped after {max_iter} iterations",
                          NonConvergenceWarning, stacklevel=2)

    if init is not None and objective(init.vector) < objective(beta):
        beta = init.vector.copy()
    return RegressionCoefficients.from_vector(beta, d_u, converged=converged)


def _wls_check(design, weights):
    sw = np.sqrt(weights)
    a = design * sw[:, None]
    gram = a.T @ a
    scale = np.sqrt(np.diag(gram))
    if np.any(scale <= 0) or np.linalg.cond(gram / np.outer(scale, scale)) > 1e12:
        raise SingularDesign("weighted normal-equation matrix is rank-deficient")
