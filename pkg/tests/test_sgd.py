import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypertune.bench.sgd import (
    DEFAULT_CONFIG,
    SPACE,
    DivergentGradient,
    Mlp,
    PointSet,
    RmsPropConfig,
    RmsPropState,
    bowl,
    init_mlp,
    make_moons,
    mlp_forward,
    mlp_loss_grad,
    read_points,
    rmsprop_run,
    rmsprop_step,
    rosenbrock,
    sgd_objective,
    test_objectives,
    write_points,
)
from hypertune.space import is_valid
from hypertune.strategies import run_loop


def reference_rmsprop(grad_fn, theta0, alpha, beta, gamma, eps, steps):
    # scalar loops over coordinates, written independently of the vectorized code
    theta = [float(v) for v in theta0]
    m = [0.0] * len(theta)
    b = [0.0] * len(theta)
    out = [list(theta)]
    for _ in range(steps):
        g = [float(v) for v in grad_fn(np.array(theta))]
        for i in range(len(theta)):
            m[i] = gamma * m[i] + (1 - gamma) * g[i] ** 2
            b[i] = beta * b[i] + alpha * g[i] / math.sqrt(m[i] + eps)
            theta[i] = theta[i] - b[i]
        out.append(list(theta))
    return out


def test_config_validation():
    for bad in ({"alpha": 0}, {"alpha": 0.1, "beta": 1.0}, {"alpha": 0.1, "gamma": -0.1}, {"alpha": 0.1, "eps": 0}):
        with pytest.raises(ValueError):
            RmsPropConfig(**bad)


def test_zero_gradient_fixpoint():
    st0 = RmsPropState(np.array([1.0, 2.0]), np.array([4.0, 1.0]), np.zeros(2), 3)
    st1 = rmsprop_step(st0, np.zeros(2), RmsPropConfig(0.1, 0.0, 0.9))
    assert np.array_equal(st1.theta, st0.theta)
    assert np.allclose(st1.m, 0.9 * st0.m)
    assert st1.t == 4


def test_first_step_hand_arithmetic():
    cfg = RmsPropConfig(0.05, 0.0, 0.0, 1e-8)
    s = rmsprop_step(RmsPropState.initial([1.0]), [2.0], cfg)
    assert s.m[0] == 4.0
    assert s.b[0] == 0.05 * 2.0 / math.sqrt(4.0 + 1e-8)
    assert s.theta[0] == pytest.approx(1.0 - 0.05, abs=1e-9)


def test_two_step_momentum():
    cfg = RmsPropConfig(0.1, 0.5, 0.8)
    s1 = rmsprop_step(RmsPropState.initial([0.0]), [1.5], cfg)
    s2 = rmsprop_step(s1, [1.5], cfg)
    fresh = 0.1 * 1.5 / math.sqrt(s2.m[0] + cfg.eps)
    assert s2.b[0] == pytest.approx(0.5 * s1.b[0] + fresh, abs=1e-15)


def test_step_errors():
    st0 = RmsPropState.initial([0.0, 0.0])
    with pytest.raises(DivergentGradient, match="divergent gradient"):
        rmsprop_step(st0, [np.inf, 0.0], RmsPropConfig(0.1))
    with pytest.raises(ValueError):
        rmsprop_step(st0, [1.0], RmsPropConfig(0.1))


def test_run_converges_on_bowl_and_zero_steps():
    f = bowl(center=(0.0, 0.0))
    traj = rmsprop_run(f.grad, [1.0, 1.0], RmsPropConfig(0.1, 0.0, 0.9), 100)
    assert len(traj) == 101 and np.linalg.norm(traj[-1]) < 0.1
    assert len(rmsprop_run(f.grad, [1.0, 1.0], RmsPropConfig(0.1), 0)) == 1


def test_twelve_step_trajectory_matches_reference():
    f = bowl()
    rng = np.random.default_rng(0)
    for _ in range(5):
        a, b, g = rng.uniform(0.01, 0.5), rng.uniform(0, 0.9), rng.uniform(0, 0.99)
        theta0 = rng.uniform(-2, 2, 2)
        got = rmsprop_run(f.grad, theta0, RmsPropConfig(a, b, g), 12)
        ref = reference_rmsprop(f.grad, theta0, a, b, g, 1e-8, 12)
        assert np.max(np.abs(np.array(got) - np.array(ref))) <= 1e-12


def test_test_objectives():
    objs = test_objectives()
    assert set(objs) == {"bowl", "rosenbrock"}
    b = objs["bowl"]
    assert np.array_equal(b.grad(b.minimizer), np.zeros(2))
    r = rosenbrock()
    assert r.value((1.0, 1.0)) == 0.0 and np.array_equal(r.grad(np.array([1.0, 1.0])), np.zeros(2))
    rng = np.random.default_rng(1)
    h = 1e-6
    for fn in (b, r):
        for _ in range(5):
            p = rng.uniform(-1.5, 1.5, 2)
            num = np.array([(fn.value(p + h * e) - fn.value(p - h * e)) / (2 * h) for e in np.eye(2)])
            assert np.allclose(fn.grad(p), num, rtol=1e-6, atol=1e-5)


def test_mlp_zero_weights():
    mlp = Mlp(np.zeros((3, 2)), np.zeros(3), np.zeros(3), 0.0)
    X = np.random.default_rng(0).normal(size=(5, 2))
    assert np.array_equal(mlp_forward(mlp, X), np.zeros(5))
    loss, _ = mlp_loss_grad(mlp, X, np.ones(5))
    assert loss == pytest.approx(math.log(2))


def test_mlp_flatten_roundtrip():
    mlp = init_mlp(2, 4, np.random.default_rng(0))
    theta = mlp.flatten()
    assert theta.size == mlp.n_params == 4 * 2 + 4 + 4 + 1
    again = mlp.with_flat(theta)
    assert np.array_equal(again.flatten(), theta)
    with pytest.raises(ValueError):
        init_mlp(2, 0, np.random.default_rng(0))


def test_mlp_gradient_finite_differences():
    rng = np.random.default_rng(2)
    mlp = init_mlp(2, 5, rng)
    mlp = mlp.with_flat(mlp.flatten() + 0.1 * rng.normal(size=mlp.n_params))
    X = rng.normal(size=(12, 2))
    y = rng.choice([-1.0, 1.0], 12)
    _, g = mlp_loss_grad(mlp, X, y)
    theta = mlp.flatten()
    h = 1e-5
    num = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        num[k] = (mlp_loss_grad(mlp.with_flat(theta + e), X, y)[0] - mlp_loss_grad(mlp.with_flat(theta - e), X, y)[0]) / (2 * h)
    assert np.linalg.norm(g - num) <= 1e-5 * np.linalg.norm(num)


def test_mlp_duplicated_batch():
    rng = np.random.default_rng(3)
    mlp = init_mlp(2, 3, rng)
    X, y = rng.normal(size=(7, 2)), rng.choice([-1.0, 1.0], 7)
    l1, g1 = mlp_loss_grad(mlp, X, y)
    l2, g2 = mlp_loss_grad(mlp, np.vstack([X, X]), np.concatenate([y, y]))
    assert l1 == pytest.approx(l2, abs=1e-14) and np.allclose(g1, g2, atol=1e-14)


def test_space_default_and_moons(tmp_path):
    assert len(SPACE) == 5 and is_valid(SPACE, DEFAULT_CONFIG)
    data = make_moons(seed=0, n=101)
    assert len(data) == 101 and set(np.unique(data.y)) == {-1, 1}
    path = tmp_path / "p.csv"
    write_points(data, path)
    back = read_points(path)
    assert np.array_equal(back.X, data.X) and np.array_equal(back.y, data.y)


def test_sgd_objective_tiny_alpha_is_chance():
    data = make_moons(seed=0)
    cfg = dict(DEFAULT_CONFIG, log_alpha=-7.0)
    accs = [sgd_objective(data, cfg, seed=s) for s in range(5)]
    assert abs(np.mean(accs) - 0.5) <= 0.15


def test_sgd_objective_deterministic():
    data = make_moons(seed=1)
    assert sgd_objective(data, DEFAULT_CONFIG, 3) == sgd_objective(data, DEFAULT_CONFIG, 3)


def test_bayes_tuned_sgd_accuracy():
    data = make_moons(seed=0)
    trace = run_loop("bayes", SPACE, lambda c: sgd_objective(data, c, seed=0), 40, seed=0)
    assert trace.best_seen[-1] > 0.85


def test_sgd_objective_divergence_is_a_fault():
    # coordinates near the float limit overflow the standardization and the gradient
    data = PointSet(np.array([[1e308, 0.0], [-1e308, 0.0]] * 10), np.array([1, -1] * 10))
    with np.errstate(all="ignore"), pytest.raises(DivergentGradient):
        sgd_objective(data, DEFAULT_CONFIG, 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1.0), st.lists(st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=5))
def test_sign_descent_limit(alpha, g):
    cfg = RmsPropConfig(alpha, 0.0, 0.0, 1e-300)
    s = rmsprop_step(RmsPropState.initial(np.zeros(len(g))), g, cfg)
    assert np.allclose(np.abs(s.theta), alpha, rtol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.999), st.lists(st.lists(st.floats(-5, 5), min_size=3, max_size=3), min_size=1, max_size=10))
def test_second_moment_bounded(gamma, grads):
    cfg = RmsPropConfig(0.1, 0.5, gamma)
    s = RmsPropState.initial(np.zeros(3))
    bound = max(max(v * v for v in g) for g in grads)
    for g in grads:
        s = rmsprop_step(s, g, cfg)
        assert np.all(s.m >= 0) and np.all(s.m <= bound * (1 + 1e-12))


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(4)), st.floats(0.01, 0.5), st.floats(0, 0.9), st.floats(0, 0.99))
def test_coordinate_permutation_invariance(perm, a, b, g):
    perm = list(perm)
    c = np.array([0.3, -0.2, 1.0, 0.5])
    theta0 = np.array([1.0, -1.5, 0.2, 2.0])
    cfg = RmsPropConfig(a, b, g)
    base = rmsprop_run(bowl(c).grad, theta0, cfg, 12)
    permuted = rmsprop_run(bowl(c[perm]).grad, theta0[perm], cfg, 12)
    for t1, t2 in zip(base, permuted):
        assert np.array_equal(t1[perm], t2)
