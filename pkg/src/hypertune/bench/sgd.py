"""RMSProp with a momentum accumulator on the step, plus a small MLP to train with it.

The update, per coordinate ``i``::

    m[i] <- gamma * m[i] + (1 - gamma) * g[i]**2
    b[i] <- beta * b[i] + alpha * g[i] / sqrt(m[i] + eps)
    theta <- theta - b

Momentum acts on the accumulated step ``b``, not on the raw gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from ..space import Continuous, Integer, ParamSpace


class DivergentGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class RmsPropConfig:
    alpha: float
    beta: float = 0.0
    gamma: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class RmsPropState:
    theta: np.ndarray
    m: np.ndarray
    b: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, theta0) -> "RmsPropState":
        theta = np.array(theta0, dtype=float)
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta), 0)


def rmsprop_step(state: RmsPropState, grad, cfg: RmsPropConfig) -> RmsPropState:
    g = np.asarray(grad, dtype=float)
    if g.shape != state.theta.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {state.theta.shape}")
    if not np.all(np.isfinite(g)):
        raise DivergentGradient("divergent gradient")
    m = cfg.gamma * state.m + (1.0 - cfg.gamma) * g * g
    b = cfg.beta * state.b + cfg.alpha * (g / np.sqrt(m + cfg.eps))
    return RmsPropState(state.theta - b, m, b, state.t + 1)


def rmsprop_run(grad_fn: Callable[[np.ndarray], np.ndarray], theta0, cfg: RmsPropConfig, steps: int) -> list:
    """Trajectory ``[theta0, theta1, ..., theta_steps]``."""
    state = RmsPropState.initial(theta0)
    traj = [state.theta.copy()]
    for _ in range(steps):
        state = rmsprop_step(state, grad_fn(state.theta), cfg)
        traj.append(state.theta.copy())
    return traj


# -- 2D test objectives ----------------------------------------------------

class TestFunction(NamedTuple):
    value: Callable
    grad: Callable
    minimizer: np.ndarray


BOWL_CENTER = np.array([0.3, -0.2])


def bowl(center=BOWL_CENTER) -> TestFunction:
    c = np.asarray(center, dtype=float)

    def value(theta):
        d = np.asarray(theta, dtype=float) - c
        return 0.5 * float(d @ d)

    def grad(theta):
        return np.asarray(theta, dtype=float) - c

    return TestFunction(value, grad, c.copy())


def rosenbrock() -> TestFunction:
    def value(theta):
        x, y = theta
        return (1.0 - x) ** 2 + 100.0 * (y - x * x) ** 2

    def grad(theta):
        x, y = theta
        return np.array([-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)])

    return TestFunction(value, grad, np.array([1.0, 1.0]))


def test_objectives() -> dict:
    return {"bowl": bowl(), "rosenbrock": rosenbrock()}


test_objectives.__test__ = False  # not a pytest test
TestFunction.__test__ = False

TESTFN_SPACES = {
    "bowl": ParamSpace((Continuous("x", -2.0, 2.0), Continuous("y", -2.0, 2.0))),
    "rosenbrock": ParamSpace((Continuous("x", -2.0, 2.0), Continuous("y", -1.0, 3.0))),
}


# -- MLP -------------------------------------------------------------------

@dataclass(frozen=True)
class Mlp:
    W1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (hidden,)
    b2: float

    @property
    def n_params(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + 1

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2, [self.b2]])

    def with_flat(self, theta) -> "Mlp":
        h, d = self.W1.shape
        theta = np.asarray(theta, dtype=float)
        W1 = theta[:h * d].reshape(h, d)
        b1 = theta[h * d:h * d + h]
        W2 = theta[h * d + h:h * d + 2 * h]
        return Mlp(W1.copy(), b1.copy(), W2.copy(), float(theta[-1]))


def init_mlp(in_dim: int, hidden: int, rng: np.random.Generator) -> Mlp:
    """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    if hidden < 1:
        raise ValueError("hidden must be >= 1")
    W1 = rng.standard_normal((hidden, in_dim)) / math.sqrt(in_dim)
    W2 = rng.standard_normal(hidden) / math.sqrt(hidden)
    return Mlp(W1, np.zeros(hidden), W2, 0.0)


def mlp_forward(mlp: Mlp, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.tanh(X @ mlp.W1.T + mlp.b1) @ mlp.W2 + mlp.b2


def mlp_loss_grad(mlp: Mlp, X, y) -> tuple[float, np.ndarray]:
    """Mean logistic loss and its gradient, flattened as (W1, b1, W2, b2)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    H = np.tanh(X @ mlp.W1.T + mlp.b1)
    f = H @ mlp.W2 + mlp.b2
    loss = float(np.logaddexp(0.0, -y * f).mean())
    # d loss / d f = -y * sigmoid(-y f) / n
    df = -y * np.exp(-np.logaddexp(0.0, y * f)) / n
    gW2 = H.T @ df
    gb2 = df.sum()
    dH = np.outer(df, mlp.W2) * (1.0 - H * H)
    gW1 = dH.T @ X
    gb1 = dH.sum(axis=0)
    return loss, np.concatenate([gW1.ravel(), gb1, gW2, [gb2]])


# -- benchmark objective ---------------------------------------------------

SPACE = ParamSpace((
    Continuous("log_alpha", -4.0, 0.0),
    Continuous("beta", 0.0, 0.99),
    Continuous("gamma", 0.0, 0.999),
    Integer("batch_size", 8, 64),
    Integer("hidden", 2, 16),
))

DEFAULT_CONFIG = {"log_alpha": -3.0, "beta": 0.0, "gamma": 0.9, "batch_size": 32, "hidden": 8}


@dataclass(frozen=True)
class PointSet:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


def make_moons(seed: int = 0, n: int = 2000, noise: float = 0.2) -> PointSet:
    """Two interleaved half circles with Gaussian jitter; labels +1 / -1."""
    rng = np.random.default_rng(seed)
    n_top = n // 2
    t_top = rng.uniform(0, math.pi, n_top)
    t_bot = rng.uniform(0, math.pi, n - n_top)
    top = np.column_stack([np.cos(t_top), np.sin(t_top)])
    bot = np.column_stack([1.0 - np.cos(t_bot), 0.5 - np.sin(t_bot)])
    X = np.vstack([top, bot]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.ones(n_top), -np.ones(n - n_top)])
    perm = rng.permutation(n)
    return PointSet(X[perm], y[perm].astype(int))


def sgd_objective(data: PointSet, config: dict, seed: int = 0) -> float:
    """Validation accuracy after one epoch of mini-batch RMSProp on an MLP."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(data))
    n_train = int(round(0.8 * len(data)))
    tr, va = perm[:n_train], perm[n_train:]
    mu = data.X[tr].mean(axis=0)
    sd = data.X[tr].std(axis=0)
    sd[sd == 0] = 1.0
    Xtr, Xva = (data.X[tr] - mu) / sd, (data.X[va] - mu) / sd
    ytr, yva = data.y[tr], data.y[va]

    mlp = init_mlp(data.X.shape[1], int(config["hidden"]), rng)
    cfg = RmsPropConfig(10.0 ** float(config["log_alpha"]), float(config["beta"]), float(config["gamma"]))
    state = RmsPropState.initial(mlp.flatten())
    bs = int(config["batch_size"])
    order = rng.permutation(n_train)
    for start in range(0, n_train, bs):
        batch = order[start:start + bs]
        _, g = mlp_loss_grad(mlp.with_flat(state.theta), Xtr[batch], ytr[batch])
        state = rmsprop_step(state, g, cfg)
    final = mlp.with_flat(state.theta)
    pred = np.where(mlp_forward(final, Xva) >= 0, 1, -1)
    return float(np.mean(pred == yva))


def write_points(data: PointSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label," + ",".join(f"x{i}" for i in range(data.X.shape[1])) + "\n")
        for x, label in zip(data.X, data.y):
            fh.write(f"{int(label)}," + ",".join(repr(float(v)) for v in x) + "\n")


def read_points(path) -> PointSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows = [line.split(",") for line in lines[1:] if line.strip()]
    return PointSet(np.array([[float(v) for v in r[1:]] for r in rows]), np.array([int(r[0]) for r in rows]))
