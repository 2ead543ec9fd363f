import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize, rosen, rosen_der
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from mocap2pose.optim import (AdamConfig, GmmModel, LbfgsConfig, OptimizationError, adam_minimize, gmm_fit_em,
                              gmm_neg_log_prob, grad_check, lbfgs_minimize, load_gmm, save_gmm)


def rosenbrock(x):
    return rosen(x), rosen_der(x)


def test_lbfgs_reaches_the_rosenbrock_minimum():
    res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0, -0.5, 0.8]), LbfgsConfig(max_iterations=500))
    ref = minimize(rosen, [-1.2, 1.0, -0.5, 0.8], jac=rosen_der, method="L-BFGS-B")
    assert res.converged
    assert np.allclose(res.x, 1.0, atol=1e-6)
    assert res.value <= ref.fun + 1e-10


def test_lbfgs_history_never_increases():
    res = lbfgs_minimize(rosenbrock, np.array([2.0, -1.5, 0.3]))
    assert np.all(np.diff(res.history) <= 1e-12 * np.abs(res.history[:-1]) + 1e-300)


def spd_quadratic(n, seed):
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(n, n))
    A = Q @ Q.T + n * np.eye(n)
    b = rng.normal(size=n)
    return A, b, (lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_lbfgs_solves_10d_quadratics_within_50_iterations(seed):
    A, b, f = spd_quadratic(10, seed)
    res = lbfgs_minimize(f, np.zeros(10), LbfgsConfig(max_iterations=50, gradient_tolerance=1e-8))
    assert res.iterations <= 50
    assert np.max(np.abs(A @ res.x - b)) < 1e-8
    assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 31))
def test_full_memory_lbfgs_decreases_strictly_on_quadratics(n, seed):
    A, b, f = spd_quadratic(n, seed)
    res = lbfgs_minimize(f, np.ones(n), LbfgsConfig(history_size=None, gradient_tolerance=1e-9))
    h = np.asarray(res.history)
    assert np.all(np.diff(h) < 0) or np.max(np.abs(A @ res.x - b)) < 1e-8


def test_lbfgs_at_the_minimum_does_nothing():
    A, b, f = spd_quadratic(4, 3)
    x0 = np.linalg.solve(A, b)
    res = lbfgs_minimize(f, x0, LbfgsConfig(gradient_tolerance=1e-6))
    assert res.iterations == 0 and res.converged
    assert np.array_equal(res.x, x0)


def test_lbfgs_rejects_nonfinite_start():
    with pytest.raises(OptimizationError):
        lbfgs_minimize(lambda x: (np.nan, np.zeros_like(x)), np.zeros(2))


def test_adam_on_a_1d_quadratic():
    res = adam_minimize(lambda x: ((x[0] - 3) ** 2, 2 * (x - 3)), np.zeros(1),
                        AdamConfig(learning_rate=0.1, max_iterations=2000))
    assert abs(res.x[0] - 3) < 1e-3


def test_adam_converges_on_a_bowl():
    target = np.array([1.0, -2.0, 0.5])
    res = adam_minimize(lambda x: (np.sum((x - target) ** 2), 2 * (x - target)), np.zeros(3),
                        AdamConfig(learning_rate=0.05, max_iterations=2000))
    assert np.allclose(res.x, target, atol=1e-3)


def test_grad_check_flags_a_wrong_gradient():
    good = grad_check(lambda x: (np.sum(np.sin(x)), np.cos(x)), np.linspace(0, 1, 5))
    bad = grad_check(lambda x: (np.sum(np.sin(x)), np.cos(x) * 1.01), np.linspace(0, 1, 5))
    assert good.passed and good.max_rel_error < 1e-8
    assert not bad.passed and bad.max_rel_error > 5e-3


def random_gmm(rng, k=3, d=4):
    A = rng.normal(size=(k, d, d))
    cov = A @ A.transpose(0, 2, 1) + 0.5 * np.eye(d)
    w = rng.dirichlet(np.ones(k))
    return GmmModel(w, rng.normal(0, 2, (k, d)), cov)


def test_log_prob_matches_scipy(rng):
    g = random_gmm(rng)
    x = rng.normal(0, 2, (20, 4))
    ref = logsumexp([np.log(w) + multivariate_normal(m, c).logpdf(x)
                     for w, m, c in zip(g.weights, g.means, g.covariances)], axis=0)
    assert np.allclose(g.log_prob(x), ref, atol=1e-10)
    nlp, _ = gmm_neg_log_prob(g, x)
    assert np.allclose(nlp, -ref, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_prior_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    g = random_gmm(rng)
    x0 = g.means[0] + rng.normal(0, 1, 4)
    assert grad_check(lambda x: gmm_neg_log_prob(g, x), x0, eps=1e-6, rel_tol=1e-5).passed


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_em_log_likelihood_never_decreases(seed):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(c, 1.0, (60, 3)) for c in (-4, 0, 4)])
    g = gmm_fit_em(x, 3, seed=seed)
    assert np.all(np.diff(g.log_likelihood_history) >= -1e-9)
    assert np.isclose(g.weights.sum(), 1.0)


def test_em_recovers_separated_clusters(rng):
    centres = np.array([[-6.0, 0.0], [0.0, 6.0], [6.0, 0.0]])
    x = np.concatenate([rng.normal(c, 0.5, (300, 2)) for c in centres])
    g = gmm_fit_em(x, 3, seed=0)
    found = g.means[np.argsort(g.means[:, 0] + 0.01 * g.means[:, 1])]
    assert np.allclose(found, centres[np.argsort(centres[:, 0] + 0.01 * centres[:, 1])], atol=0.15)
    assert np.allclose(g.weights, 1 / 3, atol=0.02)


def test_gmm_round_trip(tmp_path, rng):
    g = random_gmm(rng)
    save_gmm(g, tmp_path / "g.npz")
    back = load_gmm(tmp_path / "g.npz")
    x = rng.normal(size=(5, 4))
    assert np.allclose(back.log_prob(x), g.log_prob(x), atol=1e-12)
