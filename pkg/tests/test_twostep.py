import numpy as np
import pytest

from jointclust.data import from_arrays
from jointclust.em import EMSettings
from jointclust.losses import LossSpec, RegressionCoefficients, weighted_loss_fit
from jointclust.metrics import adjusted_rand_index
from jointclust.mm import MMSettings
from jointclust.simulation import SimDesign, generate
from jointclust.twostep import PARAMETRIC, SEMIPARAMETRIC, cluster_x, two_step_fit, x_only_fit

EM = EMSettings(n_starts=3)
MM = MMSettings(max_iter=60, n_starts=1)


@pytest.mark.parametrize("mode,s", [(PARAMETRIC, EM), (SEMIPARAMETRIC, MM)])
def test_one_class_is_all_ones(mode, s):
    data = generate(SimDesign("case1", 100, 0))
    np.testing.assert_array_equal(cluster_x(data, 1, mode, s), np.ones((100, 1)))


@pytest.mark.parametrize("mode,s", [(PARAMETRIC, EM), (SEMIPARAMETRIC, MM)])
def test_frozen_responsibilities_are_bit_identical(mode, s):
    data = generate(SimDesign("case1", 300, 4))
    r = cluster_x(data, 2, mode, s)
    fit = two_step_fit(data, 2, LossSpec.quadratic(), mode, s)
    np.testing.assert_array_equal(fit.responsibilities, r)
    ref = weighted_loss_fit(data.u, data.y, r, LossSpec.quadratic())
    np.testing.assert_array_equal(fit.coeffs.vector, ref.vector)


def test_reused_clustering_gives_same_fit():
    data = generate(SimDesign("case1", 300, 5))
    c = x_only_fit(data, 2, PARAMETRIC, EM)
    a = two_step_fit(data, 2, LossSpec.absolute(), PARAMETRIC, EM)
    b = two_step_fit(data, 2, LossSpec.absolute(), PARAMETRIC, EM, clustering=c)
    np.testing.assert_array_equal(a.coeffs.vector, b.coeffs.vector)


def test_hard_true_labels_noiseless_recovery(rng, monkeypatch):
    n = 200
    z = rng.integers(2, size=n)
    x = 4.0 * z[:, None] + 0.1 * rng.normal(size=(n, 3))
    u = rng.normal(size=(n, 2))
    truth = RegressionCoefficients([1.0, -2.0], [-1.0, 1.0])
    y = u @ truth.gamma + truth.delta[z]
    fit = two_step_fit(from_arrays(u, x, y), 2, LossSpec.quadratic(), PARAMETRIC, EM, hard=True)
    assert adjusted_rand_index(fit.labels, z) == 1.0
    fit = fit.canonical()
    np.testing.assert_allclose(fit.coeffs.vector, truth.vector, atol=1e-10)


def test_x_only_classification_quality():
    data = generate(SimDesign("case1", 2000, 7))
    for mode, s in [(PARAMETRIC, EM), (SEMIPARAMETRIC, MM)]:
        r = cluster_x(data, 2, mode, s)
        assert adjusted_rand_index(np.argmax(r, axis=1), data.true_z) >= 0.55


def test_semiparametric_two_step_keeps_x_densities():
    data = generate(SimDesign("case1", 300, 2))
    c = x_only_fit(data, 2, SEMIPARAMETRIC, MM)
    fit = two_step_fit(data, 2, LossSpec.huber(1.0), SEMIPARAMETRIC, MM, clustering=c)
    assert fit.params.components == c[0].components
    assert fit.params.noise.weights.sum() == pytest.approx(1.0)
    assert fit.diagnostics["frozen_responsibilities"]
