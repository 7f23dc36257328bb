"""Low-rank matrix factorization by alternating least squares on observed entries.

Each iteration solves every row factor against the fixed column factors,
then every column factor against the new rows. Each solve is an
independent k x k ridge system, so a half-step can be spread across
threads without changing a single bit of the result.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..space import Continuous, Integer, ParamSpace

SINGULAR_JITTER = 1e-12


class ColdStart(ValueError):
    pass


@dataclass(frozen=True)
class RatingsMatrix:
    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", vals)
        if not (len(rows) == len(cols) == len(vals)):
            raise ValueError("rows, cols and values differ in length")
        if len(rows) and (rows.min() < 0 or rows.max() >= self.m or cols.min() < 0 or cols.max() >= self.n):
            raise ValueError("entry index out of range")
        if len(set(zip(rows.tolist(), cols.tolist()))) != len(rows):
            raise ValueError("duplicate (i, j) entries")

    @classmethod
    def from_entries(cls, m: int, n: int, entries) -> "RatingsMatrix":
        entries = list(entries)
        if not entries:
            return cls(m, n, [], [], [])
        r, c, v = zip(*entries)
        return cls(m, n, r, c, v)

    def __len__(self):
        return len(self.values)

    def subset(self, idx) -> "RatingsMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return RatingsMatrix(self.m, self.n, self.rows[idx], self.cols[idx], self.values[idx])

    def entries(self) -> list:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class FactorModel:
    X: np.ndarray  # (m, k)
    Y: np.ndarray  # (k, n)

    @property
    def k(self) -> int:
        return self.X.shape[1]


def predict(model: FactorModel, i, j):
    return np.einsum("...k,k...->...", model.X[i], model.Y[:, j]) if np.ndim(i) else float(model.X[i] @ model.Y[:, j])


def _predict_entries(model: FactorModel, R: RatingsMatrix) -> np.ndarray:
    return np.einsum("ek,ke->e", model.X[R.rows], model.Y[:, R.cols])


def als_objective_value(model: FactorModel, train: RatingsMatrix, lam: float) -> float:
    """Squared error over observed entries plus lam * (||X||^2 + ||Y||^2)."""
    resid = train.values - _predict_entries(model, train)
    return float(resid @ resid + lam * (np.sum(model.X**2) + np.sum(model.Y**2)))


def rmse(model: FactorModel, entries: RatingsMatrix) -> float:
    if len(entries) == 0:
        raise ValueError("rmse of an empty entry set")
    resid = entries.values - _predict_entries(model, entries)
    return math.sqrt(float(resid @ resid) / len(entries))


def ridge_solve(F: np.ndarray, a: np.ndarray, lam: float) -> np.ndarray:
    """argmin_x ||F x - a||^2 + lam ||x||^2 via the k x k normal equations.

    ``F`` holds one other-side factor per row. A singular Gram matrix (only
    possible for lam == 0) gets a 1e-12 ridge.
    """
    k = F.shape[1]
    G = F.T @ F + lam * np.eye(k)
    rhs = F.T @ a
    try:
        return cho_solve(cho_factor(G, lower=True, check_finite=False), rhs, check_finite=False)
    except LinAlgError:
        return cho_solve(cho_factor(G + SINGULAR_JITTER * np.eye(k), lower=True, check_finite=False), rhs,
                         check_finite=False)


def _groups(keys: np.ndarray, size: int) -> list:
    order = np.argsort(keys, kind="stable")
    bounds = np.searchsorted(keys[order], np.arange(size + 1))
    return [order[bounds[i]:bounds[i + 1]] for i in range(size)]


def _half_step(target: np.ndarray, other: np.ndarray, groups: list, other_idx: np.ndarray, values: np.ndarray,
               lam: float, pool: ThreadPoolExecutor | None) -> np.ndarray:
    """Re-solve every row of ``target`` (shape (count, k)) against ``other`` (shape (*, k))."""
    out = target.copy()

    def solve(i):
        g = groups[i]
        if len(g):
            out[i] = ridge_solve(other[other_idx[g]], values[g], lam)

    if pool is None:
        for i in range(len(groups)):
            solve(i)
    else:
        list(pool.map(solve, range(len(groups))))
    return out


def als_fit(train: RatingsMatrix, k: int, lam: float, T: int, seed: int = 0, workers: int = 0,
            callback=None) -> FactorModel:
    """Alternating least squares on the observed entries of ``train``.

    ``workers > 0`` spreads each half-step over a thread pool. ``callback``,
    if given, is called with the model after every half-step.
    """
    row_groups = _groups(train.rows, train.m)
    col_groups = _groups(train.cols, train.n)
    if any(len(g) == 0 for g in row_groups) or any(len(g) == 0 for g in col_groups):
        raise ColdStart("cold start row/col")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-0.5, 0.5, (train.m, k)) / math.sqrt(k)
    Yt = rng.uniform(-0.5, 0.5, (train.n, k)) / math.sqrt(k)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 0 else None
    try:
        for _ in range(T):
            X = _half_step(X, Yt, row_groups, train.cols, train.values, lam, pool)
            if callback is not None:
                callback(FactorModel(X.copy(), Yt.T.copy()))
            Yt = _half_step(Yt, X, col_groups, train.rows, train.values, lam, pool)
            if callback is not None:
                callback(FactorModel(X.copy(), Yt.T.copy()))
    finally:
        if pool is not None:
            pool.shutdown()
    return FactorModel(X, Yt.T.copy())


def split_ratings(ratings: RatingsMatrix, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded disjoint train/valid/test partition of the entries.

    Entries whose row or column would otherwise be missing from train are
    moved there. Returns ``(train, valid, test, moved)``.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    rng = np.random.default_rng(seed)
    N = len(ratings)
    perm = rng.permutation(N)
    n_train = int(round(fractions[0] * N))
    n_valid = int(round(fractions[1] * N))
    part = np.empty(N, dtype=int)
    part[perm[:n_train]] = 0
    part[perm[n_train:n_train + n_valid]] = 1
    part[perm[n_train + n_valid:]] = 2

    row_seen = np.zeros(ratings.m, dtype=bool)
    col_seen = np.zeros(ratings.n, dtype=bool)
    row_seen[ratings.rows[part == 0]] = True
    col_seen[ratings.cols[part == 0]] = True
    moved = 0
    for e in perm:
        if part[e] != 0:
            i, j = ratings.rows[e], ratings.cols[e]
            if not row_seen[i] or not col_seen[j]:
                part[e] = 0
                row_seen[i] = col_seen[j] = True
                moved += 1
    return (ratings.subset(np.flatnonzero(part == 0)), ratings.subset(np.flatnonzero(part == 1)),
            ratings.subset(np.flatnonzero(part == 2)), moved)


def make_synthetic_ratings(seed: int = 0, m: int = 60, n: int = 40, true_rank: int = 3, noise_sd: float = 0.3,
                           density: float = 0.3) -> RatingsMatrix:
    """Observed cells of U V^T + noise with U, V ~ N(0, 1/true_rank)."""
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((m, true_rank)) / math.sqrt(true_rank)
    V = rng.standard_normal((n, true_rank)) / math.sqrt(true_rank)
    count = int(round(density * m * n))
    if count < max(m, n):
        raise ValueError("density too low to cover every row and column")
    # redraw until every row and column has at least one observed cell
    while True:
        cells = np.sort(rng.choice(m * n, size=count, replace=False))
        rows, cols = cells // n, cells % n
        if len(np.unique(rows)) == m and len(np.unique(cols)) == n:
            break
    vals = np.einsum("ek,ek->e", U[rows], V[cols]) + noise_sd * rng.standard_normal(count)
    return RatingsMatrix(m, n, rows, cols, vals)


SPACE = ParamSpace((
    Continuous("log_lambda", -4.0, 1.0),
    Integer("k", 1, 32),
    Integer("T", 1, 30),
))

# Library-default stand-in: rank 10, 10 iterations, lambda 0.01.
DEFAULT_CONFIG = {"log_lambda": -2.0, "k": 10, "T": 10}


def recsys_objective(ratings: RatingsMatrix, config: dict, seed: int = 0) -> float:
    """Negative validation RMSE (higher is better).

    The train/valid/test split is fixed (seed 0) so every configuration sees
    the same entries; ``seed`` drives the factor initialization.
    """
    train, valid, _, _ = split_ratings(ratings, seed=0)
    model = als_fit(train, int(config["k"]), 10.0 ** float(config["log_lambda"]), int(config["T"]), seed=seed)
    return -rmse(model, valid)


def write_ratings(ratings: RatingsMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,j,rating\n")
        for i, j, v in ratings.entries():
            fh.write(f"{i},{j},{v!r}\n")


def read_ratings(path, m: int | None = None, n: int | None = None) -> RatingsMatrix:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "i,j,rating":
        raise ValueError(f"{path}: expected header 'i,j,rating'")
    rows, cols, vals = [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        i, j, v = line.split(",")
        rows.append(int(i))
        cols.append(int(j))
        vals.append(float(v))
    m = m if m is not None else (max(rows) + 1 if rows else 0)
    n = n if n is not None else (max(cols) + 1 if cols else 0)
    return RatingsMatrix(m, n, rows, cols, vals)
