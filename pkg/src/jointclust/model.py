"""Parameter containers and fit results shared by the estimators."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .losses import LossSpec, RegressionCoefficients

SIMULTANEOUS_PARAMETRIC = "simultaneous-parametric"
SIMULTANEOUS_SEMIPARAMETRIC = "simultaneous-semiparametric"
TWO_STEP_PARAMETRIC = "two-step-parametric"
TWO_STEP_SEMIPARAMETRIC = "two-step-semiparametric"
METHODS = (SIMULTANEOUS_PARAMETRIC, SIMULTANEOUS_SEMIPARAMETRIC,
           TWO_STEP_PARAMETRIC, TWO_STEP_SEMIPARAMETRIC)


def check_simplex(pi, atol=1e-12) -> np.ndarray:
    pi = np.asarray(pi, dtype=float).ravel()
    if np.any(pi <= 0) or abs(pi.sum() - 1.0) > atol:
        raise ValueError("mixing weights must be positive and sum to one")
    return pi


@dataclass(frozen=True)
class JointModelParams:
    """Mixing weights, regression coefficients, class-conditional densities of X and noise density.

    ``components[k]`` describes the distribution of X in class ``k``;
    ``noise`` the density of the regression error.
    """

    pi: np.ndarray
    coeffs: RegressionCoefficients
    components: tuple
    noise: object

    def __post_init__(self):
        object.__setattr__(self, "pi", check_simplex(self.pi))
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) != self.pi.size or self.coeffs.K != self.pi.size:
            raise ValueError("pi, delta and components disagree on K")

    @property
    def K(self) -> int:
        return self.pi.size

    def permuted(self, perm) -> "JointModelParams":
        perm = np.asarray(perm, dtype=int)
        return replace(self, pi=self.pi[perm], coeffs=self.coeffs.permuted(perm),
                       components=tuple(self.components[k] for k in perm))


@dataclass
class FitResult:
    """Outcome of one estimator run.

    Attributes
    ----------
    method : str
        One of ``METHODS``.
    loss : LossSpec
    params : JointModelParams
        Fitted model; its concrete type depends on the estimator.
    responsibilities : array (n, K)
        Posterior class probabilities at the returned parameters (for two-step
        fits, the frozen clustering responsibilities used in the regression).
    trajectory : array
        Objective after each iteration (log-likelihood or smoothed log-likelihood).
    """

    method: str
    loss: LossSpec
    params: JointModelParams
    responsibilities: np.ndarray
    trajectory: np.ndarray
    converged: bool
    n_iter: int
    objective: str
    seed: int | None = None
    best_start: int = 0
    n_starts_run: int = 1
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.params.K

    @property
    def coeffs(self) -> RegressionCoefficients:
        return self.params.coeffs

    @property
    def pi(self) -> np.ndarray:
        return self.params.pi

    @property
    def labels(self) -> np.ndarray:
        """Hard partition by maximum posterior, coded ``0..K-1``."""
        return np.argmax(self.responsibilities, axis=1)

    @property
    def final_objective(self) -> float:
        return float(self.trajectory[-1]) if len(self.trajectory) else float("nan")

    def relabel(self, perm) -> "FitResult":
        """Reorder classes so that new class ``k`` is old class ``perm[k]``."""
        perm = np.asarray(perm, dtype=int)
        return replace(self, params=self.params.permuted(perm),
                       responsibilities=self.responsibilities[:, perm])

    def canonical(self) -> "FitResult":
        """Classes sorted by increasing intercept."""
        return self.relabel(np.argsort(self.coeffs.delta, kind="stable"))
