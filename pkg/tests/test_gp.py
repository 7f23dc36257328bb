import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypertune.gp import (
    _cholesky,
    IllConditionedKernel,
    KernelParams,
    ei_from_moments,
    expected_improvement,
    gp_condition,
    gp_fit,
    gp_predict,
    log_marginal,
    matern52,
    standardize,
)


def ref_matern(a, b, ls, sf):
    r = math.sqrt(5.0 * sum(((x - y) / l) ** 2 for x, y, l in zip(a, b, ls)))
    return sf * (1 + r + r * r / 3) * math.exp(-r)


def ref_gram(X, ls, sf):
    return np.array([[ref_matern(a, b, ls, sf) for b in X] for a in X])


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams([0.0], 1.0, 1e-6)
    with pytest.raises(ValueError):
        KernelParams([1.0], -1.0, 1e-6)
    with pytest.raises(ValueError):
        KernelParams([1.0], 1.0, -1e-6)
    k = KernelParams([0.3, 2.0], 1.5, 1e-4)
    back = KernelParams.from_log(k.to_log())
    assert np.allclose(back.lengthscales, k.lengthscales) and back.signal_var == pytest.approx(1.5)


def test_matern_against_reference():
    rng = np.random.default_rng(0)
    A, B = rng.random((4, 3)), rng.random((5, 3))
    k = KernelParams([0.2, 0.7, 1.3], 2.0, 0.0)
    K = matern52(A, B, k)
    ref = np.array([[ref_matern(a, b, k.lengthscales, 2.0) for b in B] for a in A])
    assert np.allclose(K, ref, rtol=1e-12)


def test_log_marginal_single_point_closed_form():
    val = log_marginal([[0.5]], [0.0], KernelParams([1.0], 1.0, 0.0))
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_log_marginal_duplicate_inputs_finite():
    val = log_marginal([[0.3], [0.3]], [0.5, -0.5], KernelParams([0.5], 1.0, 1e-2))
    assert math.isfinite(val)


def test_log_marginal_matches_dense_inverse():
    X = np.array([[0.1], [0.45], [0.9]])
    y = np.array([0.7, -1.2, 0.5])
    k = KernelParams([0.3], 1.4, 1e-3)
    K = ref_gram(X, k.lengthscales, 1.4) + 1e-3 * np.eye(3)
    ref = -0.5 * y @ np.linalg.inv(K) @ y - 0.5 * np.log(np.linalg.det(K)) - 1.5 * math.log(2 * math.pi)
    assert log_marginal(X, y, k) == pytest.approx(ref, abs=1e-9)


def test_jitter_escalation_and_failure():
    X = np.zeros((3, 1))
    # rank-one Gram matrix: needs jitter but succeeds
    assert math.isfinite(log_marginal(X, [0.1, 0.0, -0.1], KernelParams([1.0], 1.0, 0.0)))
    # eigenvalue -1 is beyond any jitter
    indefinite = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(IllConditionedKernel, match="ill-conditioned kernel"):
        _cholesky(indefinite, 0.0)


def test_chol_reconstructs_gram():
    rng = np.random.default_rng(1)
    X = rng.random((8, 2))
    m = gp_fit(X, np.sin(X.sum(axis=1) * 3), rng=np.random.default_rng(0))
    K = matern52(X, X, m.kernel) + m.kernel.noise_var * np.eye(8)
    err = np.linalg.norm(m.chol @ m.chol.T - K) / np.linalg.norm(K)
    assert err < 1e-8


def test_predict_matches_direct_linear_algebra():
    X = np.array([[0.1, 0.2], [0.5, 0.9], [0.8, 0.4]])
    y = np.array([1.0, 3.0, -2.0])
    k = KernelParams([0.4, 0.6], 1.3, 1e-3)
    m = gp_condition(X, y, k)
    ys, mean, sd = standardize(y)
    x = np.array([0.35, 0.55])
    K = ref_gram(X, k.lengthscales, 1.3) + 1e-3 * np.eye(3)
    ks = np.array([ref_matern(x, b, k.lengthscales, 1.3) for b in X])
    mu_ref = mean + sd * ks @ np.linalg.solve(K, ys)
    var_ref = sd**2 * (1.3 - ks @ np.linalg.solve(K, ks))
    mu, var = gp_predict(m, x)
    assert mu == pytest.approx(mu_ref, abs=1e-9)
    assert var == pytest.approx(var_ref, abs=1e-9)


def test_predict_interpolates_and_reverts_to_prior():
    rng = np.random.default_rng(2)
    X = rng.random((6, 2)) * 0.3
    y = rng.normal(size=6)
    k = KernelParams([0.05, 0.05], 1.0, 1e-10)
    m = gp_condition(X, y, k)
    for x, t in zip(X, y):
        assert gp_predict(m, x)[0] == pytest.approx(t, abs=1e-5)
    mu, var = gp_predict(m, [1.0, 1.0])
    assert mu == pytest.approx(m.target_mean, abs=1e-3)
    assert var == pytest.approx(m.target_sd**2, rel=1e-3)


def test_gp_fit_beats_its_starts_and_default():
    X = np.array([[0.2], [0.8]])
    m, starts = gp_fit(X, [0.0, 1.0], restarts=8, rng=np.random.default_rng(0), return_starts=True)
    assert all(m.log_marginal >= s - 1e-12 for s in starts)

    rng = np.random.default_rng(4)
    X = rng.random((5, 1))
    y = np.sin(6 * X[:, 0])
    m = gp_fit(X, y, rng=np.random.default_rng(0))
    ys, _, _ = standardize(y)
    assert m.log_marginal >= log_marginal(X, ys, KernelParams([0.5], 1.0, 1e-4)) - 1e-9


def test_gp_fit_constant_targets():
    X = np.random.default_rng(0).random((5, 2))
    m = gp_fit(X, [2.5] * 5, rng=np.random.default_rng(0))
    for x in np.random.default_rng(1).random((10, 2)):
        mu, var = gp_predict(m, x)
        assert mu == pytest.approx(2.5, abs=1e-9)
        assert var <= (m.kernel.signal_var + m.kernel.noise_var) * m.target_sd**2 + 1e-30


def test_gp_fit_preconditions():
    with pytest.raises(ValueError):
        gp_fit([[0.1]], [1.0])
    with pytest.raises(ValueError):
        gp_fit([[0.1], [0.2]], [1.0, np.nan])


def test_ei_closed_forms():
    assert ei_from_moments(1.0, 0.0, 1.0, 0.0) == 0.0
    assert ei_from_moments(2.0, 0.0, 1.0, 0.0) == pytest.approx(1.0)
    assert ei_from_moments(1.0, 1.0, 1.0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)
    # minimization mirrors maximization
    assert ei_from_moments(0.3, 0.5, 1.0, 0.0, maximize=False) == pytest.approx(
        float(ei_from_moments(1.7, 0.5, 1.0, 0.0)), abs=1e-15)


def test_ei_matches_monte_carlo():
    rng = np.random.default_rng(7)
    for _ in range(5):
        mu, sigma, best = rng.normal(), rng.uniform(0.1, 2.0), rng.normal()
        draws = np.maximum(0.0, rng.normal(mu, sigma, 10**6) - best)
        se = draws.std() / math.sqrt(len(draws))
        assert abs(float(ei_from_moments(mu, sigma, best)) - draws.mean()) < 3 * se


def test_expected_improvement_scalar_and_batch():
    X = np.array([[0.1], [0.5], [0.9]])
    m = gp_condition(X, [0.0, 1.0, 0.5], KernelParams([0.3], 1.0, 1e-6))
    single = expected_improvement(m, np.array([0.3]), 1.0)
    batch = expected_improvement(m, np.array([[0.3], [0.7]]), 1.0)
    assert isinstance(single, float) and single == pytest.approx(batch[0])
    assert np.all(batch >= 0)


def test_variance_at_training_point_below_far_point():
    X = np.array([[0.2, 0.2], [0.4, 0.6]])
    m = gp_condition(X, [1.0, 2.0], KernelParams([0.05, 0.05], 1.0, 1e-8))
    far = gp_predict(m, [1.0, 1.0])[1]
    assert all(gp_predict(m, x)[1] <= far for x in X)


def test_log_marginal_drops_with_inflated_noise():
    X = np.linspace(0, 1, 8)[:, None]
    ys, _, _ = standardize(np.sin(4 * X[:, 0]))
    k = KernelParams([0.3], 1.0, 1e-8)
    assert log_marginal(X, ys, KernelParams([0.3], 1.0, 1e-2)) < log_marginal(X, ys, k)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 0.5),
       st.lists(st.floats(0.0, 5.0), min_size=2, max_size=6))
def test_ei_nonnegative_and_monotone_in_sigma(mu, best, xi, sigmas):
    sig = np.sort(np.array(sigmas))
    ei = ei_from_moments(np.full(len(sig), mu), sig, best, xi)
    assert np.all(ei >= 0)
    assert np.all(np.diff(ei) >= -1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-5, 5), st.integers(0, 1000))
def test_ei_argmax_invariant_under_affine_targets(a, b, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((6, 2))
    y = rng.normal(size=6)
    k = KernelParams([0.3, 0.4], 1.0, 1e-6)
    cand = rng.random((50, 2))
    m1 = gp_condition(X, y, k)
    m2 = gp_condition(X, a * y + b, k)
    e1 = expected_improvement(m1, cand, y.max(), xi=0.0)
    e2 = expected_improvement(m2, cand, (a * y + b).max(), xi=0.0)
    assert np.allclose(e2, a * e1, rtol=1e-6, atol=1e-12)
    assert np.argmax(e1) == np.argmax(e2) or np.isclose(e1.max(), e1[np.argmax(e2)], rtol=1e-9)
