import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import digamma
from scipy.stats import multivariate_normal

from doublebasis.baselines import (
    ALPHA_MAX,
    COV_REG,
    dirichlet_gradient,
    dirichlet_loglik,
    dirichlet_mle,
    em_fit,
    free_parameters,
    information_criterion,
    inverse_digamma,
    mean_log,
    select_k,
)
from doublebasis.synth import DirichletSpec, draw_gmm, sample_dirichlet, sample_gmm


class TestEm:
    def test_single_component_closed_form(self, rng):
        X = rng.normal(size=(300, 2)) @ np.array([[2.0, 0.3], [0.0, 0.5]]) + [1.0, -2.0]
        fit = em_fit(X, 1)
        np.testing.assert_allclose(fit.means[0], X.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(fit.covariances[0],
                                   np.cov(X.T, bias=True) + COV_REG * np.eye(2), rtol=1e-10)
        np.testing.assert_allclose(fit.weights, [1.0])

    def test_log_likelihood_matches_scipy(self, rng):
        X = rng.normal(size=(200, 2))
        fit = em_fit(X, 3, seed=1)
        dens = sum(w * multivariate_normal(m, c).pdf(X)
                   for w, m, c in zip(fit.weights, fit.means, fit.covariances))
        np.testing.assert_allclose(fit.log_likelihood, np.log(dens).sum(), rtol=1e-10)
        np.testing.assert_allclose(fit.log_pdf(X), np.log(dens), rtol=1e-10)

    def test_separated_clusters(self, rng):
        X = np.vstack([rng.normal([3.0, 0.0], 0.3, size=(200, 2)),
                       rng.normal([-3.0, 0.0], 0.3, size=(200, 2))])
        fit = em_fit(X, 2, seed=0)
        means = fit.means[np.argsort(fit.means[:, 0])]
        np.testing.assert_allclose(means, [[-3.0, 0.0], [3.0, 0.0]], atol=0.1)

    def test_monotone_trace(self, seed):
        rng = np.random.default_rng(seed)
        X = sample_gmm(draw_gmm(rng), 200, rng)
        for k in range(1, 8):
            fit = em_fit(X, k, restarts=2, seed=seed)
            trace = np.array(fit.trace)
            assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[1:])), k
            assert fit.log_likelihood == trace[-1]

    def test_unconverged_reports_returned_parameters(self, rng):
        X = sample_gmm(draw_gmm(3, k=4), 200, 4)
        fit = em_fit(X, 4, restarts=1, max_iter=3)
        dens = sum(w * multivariate_normal(m, c).pdf(X)
                   for w, m, c in zip(fit.weights, fit.means, fit.covariances))
        assert not fit.converged
        np.testing.assert_allclose(fit.log_likelihood, np.log(dens).sum(), rtol=1e-10)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            em_fit(np.zeros((2, 2)), 3)

    def test_deterministic(self, rng):
        X = rng.normal(size=(100, 2))
        a, b = em_fit(X, 3, seed=4), em_fit(X, 3, seed=4)
        np.testing.assert_array_equal(a.means, b.means)


class TestModelSelection:
    def test_parameter_count(self):
        assert free_parameters(1) == 5
        assert free_parameters(3) == 17

    def test_singleton_range(self, rng):
        assert select_k(rng.normal(size=(60, 2)), [3], "bic").k == 3

    def test_criterion_arithmetic(self, rng):
        X = rng.normal(size=(120, 2))
        for crit in ("aic", "bic"):
            res = select_k(X, range(1, 5), crit, restarts=2)
            for k, score in res.scores.items():
                assert information_criterion(res.log_likelihoods[k], k, res.n, crit) == score
            nu = free_parameters(2)
            expected = (2 * nu if crit == "aic" else nu * math.log(120)) - 2 * res.log_likelihoods[2]
            assert res.scores[2] == expected

    def test_bic_consistency(self):
        hits = 0
        for trial in range(50):
            X = np.random.default_rng(trial).normal(size=(500, 2))
            hits += select_k(X, range(1, 11), "bic", seed=trial, restarts=3, max_iter=100).k == 1
        assert hits >= 45

    def test_holdout_criterion(self, rng):
        X = np.vstack([rng.normal([4.0, 0.0], 0.4, size=(150, 2)),
                       rng.normal([-4.0, 0.0], 0.4, size=(150, 2))])
        res = select_k(X, range(1, 5), "cv", restarts=3)
        assert res.k >= 2
        assert res.wall_time > 0

    def test_empty_holdout(self, rng):
        with pytest.raises(ValueError):
            select_k(rng.normal(size=(2, 2)), [1], "cv", holdout=0.1)
        with pytest.raises(ValueError):
            select_k(rng.normal(size=(20, 2)), [1], "cv", holdout=0.0)

    def test_unknown_criterion(self):
        with pytest.raises(ValueError):
            information_criterion(-10.0, 1, 10, "hqic")


class TestDirichletMle:
    def test_mean_log_single_point(self):
        np.testing.assert_allclose(mean_log(np.array([[0.5, 0.5]])), [-0.6931471805599453] * 2)

    def test_large_sample(self):
        x = sample_dirichlet(DirichletSpec(np.array([2.0, 5.0])), 10**5, seed=0, full=True)
        fit = dirichlet_mle(x)
        assert fit.converged
        np.testing.assert_allclose(fit.alpha, [2.0, 5.0], rtol=0.05)

    def test_identical_points(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fit = dirichlet_mle(np.array([[0.2, 0.3, 0.5], [0.2, 0.3, 0.5]]))
        assert not fit.converged
        assert np.all(np.isfinite(fit.alpha)) and np.all(fit.alpha <= ALPHA_MAX)

    def test_stationary_when_converged(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(20):
            alpha = rng.uniform(0.1, 10, 3)
            x = sample_dirichlet(DirichletSpec(alpha), 10, rng, full=True)
            fit = dirichlet_mle(x, tol=1e-8)
            if fit.converged:
                g = dirichlet_gradient(fit.alpha, mean_log(x / x.sum(axis=1, keepdims=True)))
                assert np.max(np.abs(g)) < 1e-7

    def test_gradient_matches_finite_difference(self, rng):
        alpha = rng.uniform(0.5, 5, 3)
        stat = mean_log(sample_dirichlet(DirichletSpec(alpha), 50, rng, full=True))
        h = 1e-6
        fd = [(dirichlet_loglik(alpha + h * e, stat) - dirichlet_loglik(alpha - h * e, stat)) / (2 * h)
              for e in np.eye(3)]
        np.testing.assert_allclose(dirichlet_gradient(alpha, stat), fd, rtol=1e-6, atol=1e-8)

    @given(st.floats(-8, 8))
    def test_inverse_digamma(self, y):
        assert abs(digamma(inverse_digamma(np.array(y))) - y) < 1e-10

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            dirichlet_mle(np.array([[0.5, 0.5]]))
