"""Gaussian kernels, weighted kernel density estimates and the log-smoothing operator.

The smoothing operator maps a univariate density ``f`` to
``a -> exp( integral K_h(a - b) ln f(b) db )``. The integral is evaluated by
the trapezoidal rule on a regular grid that extends ``GRID_MARGIN`` bandwidths
beyond the data, wide enough that the truncated kernel mass is below double
precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp, ndtr

from .exceptions import InvalidLevel

LOG_FLOOR = -700.0
GRID_SIZE = 512
GRID_MARGIN = 8.0
# grid spacing never exceeds h / GRID_RESOLUTION
GRID_RESOLUTION = 4.0

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth rule for the Gaussian kernel.

    ``h = n ** exponent`` unless an explicit ``h`` is given.
    """

    exponent: float = -0.2
    h: float | None = None

    def __post_init__(self):
        if self.h is not None and not self.h > 0:
            raise ValueError("bandwidth must be positive")

    def bandwidth(self, n: int) -> float:
        return select_bandwidth(n, self)

    def to_dict(self):
        return {"h": self.h} if self.h is not None else {"exponent": self.exponent}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        if d.get("h") is not None:
            return cls(h=float(d["h"]))
        return cls(exponent=float(d.get("exponent", -0.2)))


def select_bandwidth(n: int, rule: KernelConfig = KernelConfig()) -> float:
    """Bandwidth for a sample of size ``n``."""
    if rule.h is not None:
        return float(rule.h)
    if n < 2:
        raise ValueError("the power rule needs n >= 2")
    return float(n) ** rule.exponent


def gaussian_kernel(a, h):
    """Rescaled Gaussian kernel ``K_h(a) = phi(a / h) / h``."""
    z = np.array(a, dtype=float, ndmin=1) / h
    scalar = np.ndim(a) == 0
    # in place: these matrices are large and rebuilt every iteration
    np.square(z, out=z)
    z *= -0.5
    z -= _LOG_SQRT_2PI + math.log(h)
    np.exp(z, out=z)
    return z[0] if scalar else z


@dataclass(frozen=True)
class ContinuousKDE:
    """Weighted Gaussian kernel density ``sum_i w_i K_h(a - points_i)``."""

    points: np.ndarray
    weights: np.ndarray
    h: float

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if p.shape != w.shape or p.size == 0:
            raise ValueError("points and weights must be nonempty and of equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("KDE weights must be nonnegative and sum to one")
        if not self.h > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def from_weights(cls, points, weights, h):
        w = np.asarray(weights, dtype=float)
        return cls(points, w / w.sum(), h)

    def pdf(self, a):
        a = np.asarray(a, dtype=float)
        flat = a.reshape(-1)
        out = np.empty(flat.size)
        for s in range(0, flat.size, 2048):
            chunk = flat[s:s + 2048]
            out[s:s + 2048] = gaussian_kernel(chunk[:, None] - self.points[None, :], self.h) @ self.weights
        return out.reshape(a.shape)[()] if a.ndim == 0 else out.reshape(a.shape)

    def logpdf(self, a):
        a = np.asarray(a, dtype=float)
        flat = a.reshape(-1)
        logw = np.log(np.where(self.weights > 0, self.weights, 1.0))
        logw[self.weights <= 0] = -np.inf
        out = np.empty(flat.size)
        for s in range(0, flat.size, 2048):
            z = (flat[s:s + 2048, None] - self.points[None, :]) / self.h
            out[s:s + 2048] = logsumexp(logw[None, :] - 0.5 * z * z, axis=1)
        out -= _LOG_SQRT_2PI + math.log(self.h)
        return out.reshape(a.shape)[()] if a.ndim == 0 else out.reshape(a.shape)

    def cdf(self, a):
        a = np.asarray(a, dtype=float)
        return ndtr((a[..., None] - self.points) / self.h) @ self.weights

    def mean(self) -> float:
        return float(self.weights @ self.points)

    def quantile(self, tau: float) -> float:
        lo = self.points.min() - 40 * self.h
        hi = self.points.max() + 40 * self.h
        return float(brentq(lambda a: self.cdf(a) - tau, lo, hi, xtol=1e-12))

    def expectile(self, tau: float) -> float:
        """Root of ``tau E(X - e)_+ = (1 - tau) E(e - X)_+`` for the mixture."""
        h, p, w = self.h, self.points, self.weights

        def gap(e):
            z = (e - p) / h
            dens = np.exp(-0.5 * z * z - _LOG_SQRT_2PI)
            cdf = ndtr(z)
            upper = h * dens + (p - e) * (1.0 - cdf)
            lower = h * dens + (e - p) * cdf
            return float(w @ (tau * upper - (1.0 - tau) * lower))

        return float(brentq(gap, p.min() - 40 * h, p.max() + 40 * h, xtol=1e-12))


@dataclass(frozen=True)
class CategoricalPMF:
    """Probability mass over the levels ``0..L-1`` of a categorical column."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).ravel()
        if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("level probabilities must be nonnegative and sum to one")
        object.__setattr__(self, "probs", p)

    def pmf(self, level):
        level = np.asarray(level)
        if np.any(level != np.round(level)) or np.any(level < 0) or np.any(level >= self.probs.size):
            raise InvalidLevel(f"level outside [0, {self.probs.size})")
        out = self.probs[level.astype(int)]
        return out[()] if np.ndim(out) == 0 else out

    def logpmf(self, level):
        with np.errstate(divide="ignore"):
            return np.log(self.pmf(level))


def kernel_density_at(rep, a):
    """Density (continuous) or mass (categorical) of ``rep`` at ``a``."""
    if isinstance(rep, CategoricalPMF):
        return rep.pmf(a)
    return rep.pdf(a)


def make_grid(lo: float, hi: float, h: float, size: int = GRID_SIZE) -> np.ndarray:
    """Regular grid over ``[lo - GRID_MARGIN*h, hi + GRID_MARGIN*h]``.

    At least ``size`` points, and spacing no coarser than ``h / GRID_RESOLUTION``.
    """
    a, b = lo - GRID_MARGIN * h, hi + GRID_MARGIN * h
    g = max(size, int(math.ceil((b - a) * GRID_RESOLUTION / h)) + 1)
    return np.linspace(a, b, g)


def trapezoid_weights(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    d = np.diff(grid)
    q = np.zeros(grid.size)
    q[:-1] += 0.5 * d
    q[1:] += 0.5 * d
    return q


def _clipped_log(values):
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(values), LOG_FLOOR)


@dataclass(frozen=True)
class GridFunction:
    """The log-smoothed version of a density, tabulated on a grid.

    Attributes
    ----------
    grid : array (G,)
    values : array (G,)
        ``N f`` at the grid points.
    log_density : array (G,)
        ``ln f`` at the grid points, floored at ``LOG_FLOOR``.
    h : float
        Kernel bandwidth of the smoothing.
    """

    grid: np.ndarray
    values: np.ndarray
    log_density: np.ndarray
    h: float

    @property
    def quad_weights(self):
        return trapezoid_weights(self.grid)

    def log_at(self, a):
        """``(S ln f)(a)`` by quadrature; exact up to the grid rule for ``a`` inside the data hull."""
        a = np.asarray(a, dtype=float)
        flat = a.reshape(-1)
        qlog = self.quad_weights * self.log_density
        out = np.empty(flat.size)
        for s in range(0, flat.size, 2048):
            out[s:s + 2048] = gaussian_kernel(flat[s:s + 2048, None] - self.grid[None, :], self.h) @ qlog
        return out.reshape(a.shape)[()] if a.ndim == 0 else out.reshape(a.shape)

    def __call__(self, a):
        return np.exp(self.log_at(a))


def log_smooth(rep, grid=None, h=None) -> GridFunction:
    """Tabulate ``N f = exp(S ln f)`` for a univariate density.

    Parameters
    ----------
    rep : ContinuousKDE or callable
        The density ``f``. A callable must return density values on an array.
    grid : array, optional
        Quadrature grid; built from the KDE support when omitted.
    h : float, optional
        Smoothing bandwidth; defaults to the KDE bandwidth.
    """
    if isinstance(rep, ContinuousKDE):
        h = rep.h if h is None else h
        if grid is None:
            grid = make_grid(rep.points.min(), rep.points.max(), h)
        dens = rep.pdf(grid)
    else:
        if grid is None or h is None:
            raise ValueError("a callable density needs an explicit grid and bandwidth")
        dens = np.asarray(rep(grid), dtype=float)
    grid = np.asarray(grid, dtype=float)
    log_f = _clipped_log(dens)
    if not np.all(np.isfinite(log_f)):
        raise FloatingPointError("log density is not finite on the grid")
    ker = gaussian_kernel(grid[:, None] - grid[None, :], h)
    log_values = ker @ (trapezoid_weights(grid) * log_f)
    return GridFunction(grid, np.exp(log_values), log_f, float(h))


class SmoothingBasis:
    """Kernel matrices for a fixed set of sample points and a grid.

    Fits re-weight the same sample points many times; precomputing
    ``K_h(points_i - grid_g)`` turns the density update and the smoothed
    evaluation into two matrix products. The matrices are dense: a class
    may carry no weight near a point, and the far tail of its density then
    decides ``S ln f`` there, so the kernel cannot be truncated.
    """

    def __init__(self, points, h, grid=None):
        self.points = np.asarray(points, dtype=float).ravel()
        self.h = float(h)
        if grid is None:
            grid = make_grid(self.points.min(), self.points.max(), self.h)
        self.grid = np.asarray(grid, dtype=float)
        self.kernel = gaussian_kernel(self.points[:, None] - self.grid[None, :], self.h)
        self.quad = self.kernel * trapezoid_weights(self.grid)[None, :]

    def density_on_grid(self, weights):
        """KDE values on the grid; ``weights`` is (n,) or (m, n) with rows summing to one."""
        return np.asarray(weights, dtype=float) @ self.kernel

    def log_smoothed_at_points(self, log_density_grid):
        """``S ln f`` at the sample points; ``log_density_grid`` is (G,) or (m, G)."""
        return self.quad @ np.asarray(log_density_grid, dtype=float).T

    def smooth(self, weights):
        """Rebuild the weighted KDE and return ``(ln f on grid, S ln f at points)``."""
        log_f = _clipped_log(self.density_on_grid(weights))
        return log_f, self.log_smoothed_at_points(log_f)


def log_smoothed_component_density(x_smoothers, noise_smoother, coeffs, u, x, y):
    """``ln (N f_k)(w | u)`` for every record and class, shape (n, K).

    Parameters
    ----------
    x_smoothers : sequence over classes of sequences over X columns
        Each entry is a GridFunction (continuous column, smoothed) or a
        CategoricalPMF (used as is).
    noise_smoother : GridFunction
        Log-smoothed residual density.
    coeffs : RegressionCoefficients
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    x = np.asarray(x, dtype=float).reshape(n, -1)
    K = len(x_smoothers)
    out = np.zeros((n, K))
    resid = coeffs.residuals(u, y)
    for k in range(K):
        for j, sm in enumerate(x_smoothers[k]):
            if isinstance(sm, CategoricalPMF):
                out[:, k] += np.maximum(sm.logpmf(x[:, j]), LOG_FLOOR)
            else:
                out[:, k] += sm.log_at(x[:, j])
        if noise_smoother is not None:
            out[:, k] += noise_smoother.log_at(resid[:, k])
    return out


def smoothed_component_density(model, u, x, y):
    """``(N f_k)(w | u)`` for each record and class of a fitted semi-parametric model."""
    return np.exp(log_smoothed_component_density(
        model.x_smoothers, model.noise_smoother, model.coeffs, u, x, y))
