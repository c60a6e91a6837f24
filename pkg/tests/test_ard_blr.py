import math

import numpy as np
import pytest

from abrac.ard_blr import (
    ArdHead,
    FitBounds,
    fit,
    nll_dense,
    nll_fast,
    nll_gradient,
    posterior_from_head,
    predict,
    predict_many,
    prior_result,
    relative_weights,
)


def random_instance(r, n_max=50, b_max=20):
    n = int(r.integers(1, n_max + 1))
    b = int(r.integers(1, b_max + 1))
    phi = r.standard_normal((n, b))
    y = r.standard_normal(n)
    head = ArdHead(np.exp(r.uniform(-3, 3, b)), math.exp(r.uniform(-3, 3)))
    return phi, y, head


def dense_posterior(phi, y, head, f):
    K = head.beta * phi.T @ phi + np.diag(head.alpha)
    Kinv = np.linalg.inv(K)
    return head.beta * f @ Kinv @ phi.T @ y, f @ Kinv @ f + 1 / head.beta


def fd_gradient(phi, y, head, h=1e-5):
    theta = np.log(np.append(head.alpha, head.beta))
    g = []
    for e in np.eye(theta.size) * h:
        hp = ArdHead(np.exp((theta + e)[:-1]), math.exp((theta + e)[-1]))
        hm = ArdHead(np.exp((theta - e)[:-1]), math.exp((theta - e)[-1]))
        g.append((nll_fast(phi, y, hp)[0] - nll_fast(phi, y, hm)[0]) / (2 * h))
    return np.array(g)


def test_nll_scalar_zero_data():
    nll, _ = nll_fast([[1.0]], [0.0], ArdHead([1.0], 1.0))
    assert nll == pytest.approx(0.5 * math.log(2), abs=1e-15)


def test_nll_scalar_with_data():
    nll, _ = nll_fast([[1.0]], [1.0], ArdHead([1.0], 1.0))
    assert nll == pytest.approx(0.5 * math.log(2) + 0.25, abs=1e-15)


def test_nll_matches_dense(rng):
    for _ in range(200):
        phi, y, head = random_instance(rng)
        fast, L = nll_fast(phi, y, head)
        assert abs(fast - nll_dense(phi, y, head)) <= 1e-9 * max(1.0, abs(fast))
        A = phi.T @ phi + np.diag(head.alpha / head.beta)
        np.testing.assert_allclose(L @ L.T, A, rtol=1e-10, atol=1e-12)


def test_gradient_by_hand():
    g = nll_gradient([[1.0]], [0.0], ArdHead([1.0], 1.0))
    assert g[0] == pytest.approx(-0.25, abs=1e-14)


def test_gradient_matches_finite_differences(rng):
    for _ in range(50):
        phi, y, head = random_instance(rng)
        g = nll_gradient(phi, y, head)
        fd = fd_gradient(phi, y, head)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)


def test_fit_reaches_stationary_point(rng):
    phi = rng.standard_normal((40, 3))
    y = phi @ np.array([1.0, -0.5, 0.2]) + 0.3 * rng.standard_normal(40)
    res = fit(phi, y)
    assert res.converged
    g = nll_gradient(phi, y, res.head)
    theta = np.log(np.append(res.head.alpha, res.head.beta))
    lo, hi = -12, 12
    free = (theta > lo + 1e-6) & (theta < hi - 1e-6)
    assert np.linalg.norm(g[free]) < 1e-4


def test_fit_never_worse_than_init(rng):
    for _ in range(30):
        phi, y, head = random_instance(rng, n_max=15, b_max=8)
        res = fit(phi, y, init=head)
        assert res.nll <= nll_fast(phi, y, head)[0] + 1e-12


def test_fit_generative_recovery(rng):
    n, b, noise = 400, 5, 0.1
    phi = rng.standard_normal((n, b))
    w = rng.standard_normal(b)
    y = phi @ w + noise * rng.standard_normal(n)
    res = fit(phi, y)
    mean, _ = predict_many(res, phi)
    assert np.max(np.abs(mean - y)) < 3 * noise * 1.5
    assert np.mean(np.abs(mean - y) < 3 * noise) > 0.99
    assert 1 / math.sqrt(res.head.beta) == pytest.approx(noise, rel=0.15)


def test_ard_prunes_irrelevant_columns(rng):
    n = 30
    phi = rng.standard_normal((n, 4))
    y = 2.0 * phi[:, 0]
    res = fit(phi, y)
    alpha = res.head.alpha
    assert np.all(alpha[1:] > 1e4 * alpha[0])
    assert np.all(relative_weights(res)[1:] < 0.01)


def test_single_observation_reduces_local_uncertainty():
    phi = np.array([[1.0, 0.0]])
    res = fit(phi, [0.7])
    near = predict(res, np.array([1.0, 0.0]))
    far = predict(res, np.array([0.0, 1.0]))
    assert far.variance > near.variance


def test_predict_by_hand():
    res = posterior_from_head([[1.0]], [1.0], ArdHead([1.0], 1.0))
    p = predict(res, np.array([1.0]))
    assert p.mean == pytest.approx(0.5, abs=1e-15)
    assert p.variance == pytest.approx(1.5, abs=1e-15)


def test_predict_zero_features_is_noise_floor(rng):
    phi, y, head = random_instance(rng)
    p = predict(posterior_from_head(phi, y, head), np.zeros(head.b))
    assert p.mean == 0.0
    assert p.variance == pytest.approx(1 / head.beta, rel=1e-15)


def test_predict_matches_dense(rng):
    for _ in range(200):
        phi, y, head = random_instance(rng)
        res = posterior_from_head(phi, y, head)
        f = rng.standard_normal(head.b)
        p = predict(res, f)
        mu, var = dense_posterior(phi, y, head, f)
        assert p.mean == pytest.approx(mu, rel=1e-9, abs=1e-9)
        assert p.variance == pytest.approx(var, rel=1e-9, abs=1e-9)
        assert p.variance >= 1 / head.beta - 1e-12


def test_prior_result_variance():
    head = ArdHead([2.0, 4.0], 5.0)
    p = predict(prior_result(head), np.array([1.0, 2.0]))
    assert p.mean == 0.0
    assert p.variance == pytest.approx(1 / 2 + 4 / 4 + 1 / 5)


def test_predict_dimension_mismatch():
    res = prior_result(ArdHead([1.0, 1.0], 1.0))
    with pytest.raises(ValueError):
        predict(res, np.ones(3))


def test_relative_weights_examples():
    res = prior_result(ArdHead(np.ones(3), 1.0))
    res = type(res)(res.head, 0.0, np.array([2.0, -1.0, 0.0]), res.chol)
    np.testing.assert_allclose(relative_weights(res), [1.0, 0.5, 0.0])
    one = prior_result(ArdHead([1.0], 1.0))
    one = type(one)(one.head, 0.0, np.array([-3.0]), one.chol)
    assert relative_weights(one).tolist() == [1.0]
    assert relative_weights(prior_result(ArdHead([1.0], 1.0))).tolist() == [0.0]


def test_shared_alpha_ties_precisions(rng):
    phi = rng.standard_normal((20, 6))
    y = phi @ rng.standard_normal(6)
    res = fit(phi, y, shared_alpha=True)
    assert np.ptp(res.head.alpha) == 0.0


def test_finite_difference_mode_agrees(rng):
    phi = rng.standard_normal((25, 4))
    y = phi @ np.array([1.0, 0.0, -1.0, 0.5]) + 0.2 * rng.standard_normal(25)
    a = fit(phi, y)
    b = fit(phi, y, gradient="fd")
    assert b.nll == pytest.approx(a.nll, abs=1e-6)


def test_fit_respects_bounds(rng):
    phi = rng.standard_normal((10, 3))
    y = phi[:, 0]
    bounds = FitBounds((-2.0, 3.0), (-1.0, 4.0))
    res = fit(phi, y, bounds=bounds)
    assert np.all(np.log(res.head.alpha) <= 3.0 + 1e-12) and np.all(np.log(res.head.alpha) >= -2.0 - 1e-12)
    assert -1.0 - 1e-12 <= math.log(res.head.beta) <= 4.0 + 1e-12


def test_prediction_scales_with_targets(rng):
    phi = rng.standard_normal((30, 3))
    y = phi @ np.array([1.0, 2.0, -1.0])
    base = predict_many(fit(phi, y), phi)[0]
    scaled = predict_many(fit(phi, 7.5 * y), phi)[0]
    np.testing.assert_allclose(scaled, 7.5 * base, rtol=1e-6, atol=1e-6)


def test_nll_time_is_linear_in_n():
    from abrac.perf import nll_scaling
    _, _, r2 = nll_scaling()
    assert r2 > 0.95
