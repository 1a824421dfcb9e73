"""Evaluation: partition agreement, label alignment, coefficient error and the two-step bias oracle."""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import LengthMismatch
from .losses import RegressionCoefficients

EXHAUSTIVE_MAX_K = 8


def _comb2(a):
    a = np.asarray(a, dtype=float)
    return a * (a - 1) / 2.0


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index of two partitions given as label vectors."""
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"label vectors have lengths {a.size} and {b.size}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    index = _comb2(table).sum()
    rows = _comb2(table.sum(axis=1)).sum()
    cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(a.size)
    expected = rows * cols / total if total > 0 else 0.0
    maximum = 0.5 * (rows + cols)
    if maximum == expected:
        # both partitions trivial in the same way
        return 1.0 if rows == cols else 0.0
    return float((index - expected) / (maximum - expected))


def align_labels(delta_hat, delta_true=None, t_hat=None, t_ref=None) -> np.ndarray:
    """Permutation ``perm`` so that fitted class ``perm[k]`` matches reference class ``k``.

    With ``delta_true``, minimises ``sum_k (delta_hat[perm[k]] - delta_true[k])**2``;
    otherwise maximises the responsibility overlap ``sum_i t_hat[i, perm[k]] t_ref[i, k]``.
    """
    delta_hat = np.asarray(delta_hat, dtype=float).ravel()
    K = delta_hat.size
    if delta_true is not None:
        delta_true = np.asarray(delta_true, dtype=float).ravel()
        cost = (delta_hat[None, :] - delta_true[:, None]) ** 2
    elif t_hat is not None and t_ref is not None:
        cost = -(np.asarray(t_ref).T @ np.asarray(t_hat))
    else:
        raise ValueError("need delta_true or a pair of responsibility matrices")
    if K <= EXHAUSTIVE_MAX_K:
        best, best_cost = None, np.inf
        for perm in itertools.permutations(range(K)):
            c = cost[np.arange(K), perm].sum()
            if c < best_cost - 1e-15:
                best, best_cost = perm, c
        return np.array(best)
    rows, cols = linear_sum_assignment(cost)
    return cols[np.argsort(rows)]


def coefficient_mse(beta_hat: RegressionCoefficients, beta_true: RegressionCoefficients, perm=None) -> float:
    """Mean squared error over all ``d_U + K`` coefficients after relabelling."""
    if perm is not None:
        beta_hat = beta_hat.permuted(perm)
    return float(np.mean((beta_hat.vector - beta_true.vector) ** 2))


def per_coefficient_errors(beta_hat, beta_true, perm=None) -> np.ndarray:
    if perm is not None:
        beta_hat = beta_hat.permuted(perm)
    return beta_hat.vector - beta_true.vector


def predicted_two_step_intercepts(delta, resp) -> tuple:
    """Limit of the two-step intercepts given samples of the X-only posterior.

    ``resp`` is an (m, K) matrix of ``r_k(X)`` at draws of X. Returns
    ``(delta_tilde, Delta)`` with ``Delta_kl = E[r_k r_l]`` and
    ``delta_tilde_k = sum_l Delta_kl delta_l / sum_h Delta_kh``.
    """
    resp = np.asarray(resp, dtype=float)
    Delta = resp.T @ resp / resp.shape[0]
    delta = np.asarray(delta, dtype=float)
    return Delta @ delta / Delta.sum(axis=1), Delta


def lemma2_bias_oracle(design, n_mc: int = 10**6, seed: int = 0) -> dict:
    """Asymptotic bias of the fuzzy two-step intercepts under a known design.

    ``Delta`` is estimated by Monte Carlo with the true X-only posterior.
    Returns a dict with ``bias``, ``delta_tilde`` and ``Delta``.
    """
    from .simulation import BayesRules, generate

    sample = generate(design.with_n(n_mc).with_seed(seed))
    resp = BayesRules(design).x_rule(sample.x)
    delta_tilde, Delta = predicted_two_step_intercepts(design.delta, resp)
    return {"bias": delta_tilde - np.asarray(design.delta), "delta_tilde": delta_tilde, "Delta": Delta}


@dataclass
class EvalReport:
    """Scores of one fit against the truth."""

    ari: float
    beta_mse: float | None = None
    per_coefficient_errors: list = field(default_factory=list)
    prediction_mse: float | None = None
    bias_table: list | None = None
    permutation: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict())

    def csv_row(self, prefix=None):
        """Flat mapping suitable for one CSV row."""
        row = dict(prefix or {})
        row["ari"] = self.ari
        row["beta_mse"] = self.beta_mse
        row["prediction_mse"] = self.prediction_mse
        for j, e in enumerate(self.per_coefficient_errors):
            row[f"err_{j}"] = e
        return row


def evaluate(fit, beta_true: RegressionCoefficients | None = None, true_z=None,
             test_data=None, y_pred=None) -> EvalReport:
    """Score a FitResult: ARI against ``true_z``, aligned coefficient MSE, prediction MSE.

    ``y_pred`` are predictions for ``test_data`` computed by the caller.
    """
    ari = float("nan") if true_z is None else adjusted_rand_index(true_z, fit.labels)
    report = EvalReport(ari=ari)
    if beta_true is not None:
        perm = align_labels(fit.coeffs.delta, beta_true.delta)
        report.permutation = [int(p) for p in perm]
        report.beta_mse = coefficient_mse(fit.coeffs, beta_true, perm)
        report.per_coefficient_errors = [float(e) for e in per_coefficient_errors(fit.coeffs, beta_true, perm)]
    if test_data is not None and y_pred is not None:
        report.prediction_mse = float(np.mean((np.asarray(test_data.y) - np.asarray(y_pred)) ** 2))
    return report
