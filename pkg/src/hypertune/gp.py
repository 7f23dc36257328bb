"""Gaussian process regression on the unit cube, with expected improvement.

Matérn 5/2 kernel with one lengthscale per input dimension. Targets are
standardized before fitting; predictions come back in original units.
Kernel hyperparameters are chosen by maximizing the log marginal likelihood
with a multi-start coordinate search in log space (no kernel gradients).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf, dtrtrs
from scipy.special import ndtr

JITTER_FLOOR = 1e-10
JITTER_MAX = 1e-4
SD_FLOOR = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)

# Starting-point ranges for the restarts.
_START_LS = (0.05, 2.0)
_START_SF = (0.25, 4.0)
_START_SN = (1e-8, 1e-2)
# Hard search bounds (log space is clipped to these).
_BOUND_LS = (1e-3, 1e2)
_BOUND_SF = (1e-2, 1e2)
_BOUND_SN = (JITTER_FLOOR, 1.0)


class IllConditionedKernel(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelParams:
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not (np.all(np.isfinite(ls)) and np.all(ls > 0)):
            raise ValueError("lengthscales must be finite and positive")
        if not (math.isfinite(self.signal_var) and self.signal_var > 0):
            raise ValueError("signal_var must be positive")
        if not (math.isfinite(self.noise_var) and self.noise_var >= 0):
            raise ValueError("noise_var must be non-negative")

    def to_log(self) -> np.ndarray:
        return np.concatenate([np.log(self.lengthscales), [math.log(self.signal_var), math.log(self.noise_var)]])

    @classmethod
    def from_log(cls, theta: np.ndarray) -> "KernelParams":
        return cls(np.exp(theta[:-2]), float(math.exp(theta[-2])), float(math.exp(theta[-1])))


def _sq_diffs(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (len(A), len(B), d)."""
    return (A[:, None, :] - B[None, :, :]) ** 2


def _matern52(sq: np.ndarray, lengthscales: np.ndarray, signal_var: float) -> np.ndarray:
    r2 = sq @ (5.0 / lengthscales**2)
    r = np.sqrt(np.maximum(r2, 0.0))
    return signal_var * (1.0 + r + r * r / 3.0) * np.exp(-r)


def matern52(A: np.ndarray, B: np.ndarray, kernel: KernelParams) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    return _matern52(_sq_diffs(A, B), kernel.lengthscales, kernel.signal_var)


def _cholesky(K: np.ndarray, noise_var: float) -> tuple[np.ndarray, float]:
    """Cholesky of K + noise*I, escalating jitter on failure.

    Returns the factor and the diagonal term actually used.
    """
    n = len(K)
    diag = noise_var
    jitter = JITTER_FLOOR
    while True:
        try:
            L = np.linalg.cholesky(K + diag * np.eye(n))
            return L, diag
        except np.linalg.LinAlgError:
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise IllConditionedKernel("ill-conditioned kernel") from None
            diag = noise_var + jitter
            jitter *= 10.0


def _log_marginal_sq(sq: np.ndarray, y: np.ndarray, kernel: KernelParams) -> float:
    K = _matern52(sq, kernel.lengthscales, kernel.signal_var)
    L, _ = _cholesky(K, kernel.noise_var)
    a = solve_triangular(L, y, lower=True)
    n = len(y)
    return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * n * _LOG_2PI)


def _log_marginal_fast(sq: np.ndarray, y: np.ndarray, theta: np.ndarray) -> float:
    """Same quantity as ``_log_marginal_sq`` from log parameters, minus the
    dataclass and exception overhead; used inside the hyperparameter search."""
    w = 5.0 * np.exp(-2.0 * theta[:-2])
    r = np.sqrt(sq @ w)
    K = math.exp(theta[-2]) * (1.0 + r + r * r / 3.0) * np.exp(-r)
    base = math.exp(theta[-1])
    diag = base
    jitter = JITTER_FLOOR
    idx = np.diag_indices_from(K)
    K0 = K[idx].copy()
    while True:
        K[idx] = K0 + diag
        L, info = dpotrf(K, lower=1, clean=0, overwrite_a=0)
        if info == 0:
            break
        if jitter > JITTER_MAX * (1 + 1e-9):
            return -math.inf
        diag = base + jitter
        jitter *= 10.0
    a, _ = dtrtrs(L, y, lower=1)
    return float(-0.5 * a @ a - np.log(L[idx]).sum() - 0.5 * len(y) * _LOG_2PI)


def log_marginal(inputs, targets_std, kernel: KernelParams) -> float:
    """GP evidence of standardized targets under ``kernel``."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets_std, dtype=float)
    return _log_marginal_sq(_sq_diffs(X, X), y, kernel)


@dataclass(frozen=True)
class GpModel:
    inputs: np.ndarray
    targets_std: np.ndarray
    target_mean: float
    target_sd: float
    kernel: KernelParams
    chol: np.ndarray
    alpha: np.ndarray
    log_marginal: float

    @property
    def n(self) -> int:
        return len(self.inputs)


def standardize(targets) -> tuple[np.ndarray, float, float]:
    y = np.asarray(targets, dtype=float)
    mean = float(y.mean())
    sd = float(y.std())
    if not sd > SD_FLOOR:
        sd = SD_FLOOR
    return (y - mean) / sd, mean, sd


def gp_condition(inputs, targets, kernel: KernelParams) -> GpModel:
    """Build the posterior for fixed kernel hyperparameters."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y_std, mean, sd = standardize(targets)
    K = matern52(X, X, kernel)
    L, _ = _cholesky(K, kernel.noise_var)
    alpha = cho_solve((L, True), y_std)
    a = solve_triangular(L, y_std, lower=True)
    lml = float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * len(y_std) * _LOG_2PI)
    return GpModel(X, y_std, mean, sd, kernel, L, alpha, lml)


def _coordinate_search(f, theta0, lo, hi, step0=1.0, min_step=0.05, max_evals=80):
    """Maximize ``f`` by compass search along each coordinate in turn."""
    theta = np.clip(theta0, lo, hi)
    best = f(theta)
    evals = 1
    step = step0
    while step >= min_step and evals < max_evals:
        improved = False
        for i in range(len(theta)):
            for sign in (1.0, -1.0):
                cand = theta.copy()
                cand[i] = min(max(cand[i] + sign * step, lo[i]), hi[i])
                if cand[i] == theta[i]:
                    continue
                val = f(cand)
                evals += 1
                if val > best:
                    theta, best = cand, val
                    improved = True
                    break
        if not improved:
            step *= 0.5
    return theta, best


def gp_fit(inputs, targets, restarts: int = 8, rng: np.random.Generator | None = None,
           return_starts: bool = False):
    """Fit kernel hyperparameters by maximizing the log marginal likelihood.

    Each restart begins at a log-uniform random point and runs a coordinate
    search on the log parameters. The restart with the highest likelihood wins
    (ties go to the earliest restart). With ``return_starts`` the likelihood at
    every starting point is returned too.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float)
    if len(X) < 2:
        raise ValueError("gp_fit needs at least 2 observations")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    if rng is None:
        rng = np.random.default_rng(0)
    d = X.shape[1]
    y_std, _, _ = standardize(y)
    sq = _sq_diffs(X, X)

    lo = np.log(np.array([_BOUND_LS[0]] * d + [_BOUND_SF[0], _BOUND_SN[0]]))
    hi = np.log(np.array([_BOUND_LS[1]] * d + [_BOUND_SF[1], _BOUND_SN[1]]))

    def objective(theta):
        return _log_marginal_fast(sq, y_std, theta)

    def log_uniform(lo_, hi_, size=None):
        return rng.uniform(math.log(lo_), math.log(hi_), size=size)

    best_theta, best_val = None, -np.inf
    start_vals = []
    for _ in range(max(1, restarts)):
        theta0 = np.concatenate([log_uniform(*_START_LS, size=d), [log_uniform(*_START_SF), log_uniform(*_START_SN)]])
        start_vals.append(objective(theta0))
        theta, val = _coordinate_search(objective, theta0, lo, hi)
        if val > best_val:
            best_theta, best_val = theta, val
    if best_theta is None:
        raise IllConditionedKernel("ill-conditioned kernel")
    model = gp_condition(X, y, KernelParams.from_log(best_theta))
    if return_starts:
        return model, start_vals
    return model


def gp_predict_many(model: GpModel, X) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Ks = matern52(X, model.inputs, model.kernel)
    mu = Ks @ model.alpha
    v = solve_triangular(model.chol, Ks.T, lower=True)
    var = model.kernel.signal_var - np.einsum("ij,ij->j", v, v)
    var = np.maximum(var, 0.0)
    return model.target_mean + model.target_sd * mu, var * model.target_sd**2


def gp_predict(model: GpModel, x) -> tuple[float, float]:
    mu, var = gp_predict_many(model, np.atleast_2d(x))
    return float(mu[0]), float(var[0])


def ei_from_moments(mu, sigma, best_value, xi=0.0, maximize=True):
    """Expected improvement for Gaussian predictive moments (vectorized)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    delta = (mu - best_value if maximize else best_value - mu) - xi
    safe = np.where(sigma > 0, sigma, 1.0)
    with np.errstate(over="ignore"):  # subnormal sigma sends z to +-inf, which is fine
        z = delta / safe
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    ei = delta * ndtr(z) + sigma * pdf
    ei = np.where(sigma > 0, ei, np.maximum(delta, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(model: GpModel, x, best_value: float, xi: float = 0.0, maximize: bool = True):
    """EI at ``x`` (one point or a batch of rows). ``xi`` is in target units."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    mu, var = gp_predict_many(model, X)
    ei = ei_from_moments(mu, np.sqrt(var), best_value, xi, maximize)
    return float(ei[0]) if np.ndim(x) == 1 else ei
