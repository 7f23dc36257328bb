"""Unsupervised patch features feeding a gradient-boosted tree classifier.

Pipeline: square patches on a stride, ZCA whitening, a k-means codebook,
percentile-sparsified centroid distances, sum pooling over image quadrants,
then gradient boosting with logistic loss on the pooled features. The
whitening and codebook are learned from an unlabeled pool only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..space import Continuous, Integer, ParamSpace

POOL_R = 2
GOLDEN_STEPS = 20
RHO_MAX = 10.0


@dataclass(frozen=True)
class ImageSet:
    images: np.ndarray  # (count, n, n)
    labels: np.ndarray

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=float)
        if imgs.ndim != 3 or imgs.shape[1] != imgs.shape[2]:
            raise ValueError("images must be a stack of square matrices")
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))
        if len(self.labels) != len(imgs):
            raise ValueError("images and labels differ in length")

    @property
    def n(self) -> int:
        return self.images.shape[1]

    def __len__(self):
        return len(self.images)


@dataclass(frozen=True)
class ZcaTransform:
    mu: np.ndarray
    U: np.ndarray
    eigenvalues: np.ndarray
    eps: float

    @property
    def matrix(self) -> np.ndarray:
        return self.U @ np.diag(1.0 / np.sqrt(self.eigenvalues + self.eps)) @ self.U.T


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray
    inertia: float
    inertia_history: tuple = ()

    @property
    def K(self) -> int:
        return len(self.centroids)


# -- patches and whitening -----------------------------------------------

def extract_patches(image, w: int, s: int) -> np.ndarray:
    """Row-major grid of flattened ``w``x``w`` patches, shape (g, g, w*w)."""
    image = np.asarray(image, dtype=float)
    n = image.shape[0]
    if w > n:
        raise ValueError(f"patch width {w} exceeds image size {n}")
    if w < 1 or s < 1:
        raise ValueError("patch width and stride must be >= 1")
    windows = np.lib.stride_tricks.sliding_window_view(image, (w, w))[::s, ::s]
    g = windows.shape[0]
    return windows.reshape(g, g, w * w).copy()


def fit_zca(patches, eps: float) -> ZcaTransform:
    X = np.asarray(patches, dtype=float)
    N = len(X)
    if N - 1 < 1:
        raise ValueError("ZCA needs at least 2 patches")
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = Xc.T @ Xc / (N - 1)
    lam, U = np.linalg.eigh(cov)
    order = np.argsort(lam)[::-1]
    lam, U = lam[order], U[:, order]
    lam = np.where(lam < 0, 0.0, lam)
    return ZcaTransform(mu, U, lam, float(eps))


def apply_zca(zca: ZcaTransform, patches) -> np.ndarray:
    X = np.asarray(patches, dtype=float)
    scale = 1.0 / np.sqrt(zca.eigenvalues + zca.eps)
    return ((X - zca.mu) @ zca.U) * scale @ zca.U.T


# -- k-means ---------------------------------------------------------------

def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(X, K, rng):
    N = len(X)
    centers = [int(rng.integers(N))]
    closest = _sq_dists(X, X[centers])[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(N, p=closest / total))
        else:
            idx = int(rng.integers(N))
        centers.append(idx)
        closest = np.minimum(closest, _sq_dists(X, X[idx:idx + 1])[:, 0])
    return X[centers].copy()


def kmeans_fit(X, K: int, iters: int = 50, seed: int = 0) -> Codebook:
    """k-means++ seeding followed by Lloyd iterations until assignments settle."""
    X = np.asarray(X, dtype=float)
    if len(X) < K:
        raise ValueError(f"need at least K={K} points, got {len(X)}")
    rng = np.random.default_rng(seed)
    C = _kmeans_pp(X, K, rng)
    assign = None
    history = []
    for _ in range(iters):
        d = _sq_dists(X, C)
        new_assign = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(X)), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        point_d = d[np.arange(len(X)), assign]
        for k in range(K):
            members = assign == k
            if members.any():
                C[k] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(point_d))
                C[k] = X[far]
                point_d[far] = 0.0
    d = _sq_dists(X, C)
    inertia = float(d.min(axis=1).sum())
    return Codebook(C, inertia, tuple(history))


# -- encoding and pooling --------------------------------------------------

def encode_many(patches, codebook: Codebook, sparse_p: float) -> np.ndarray:
    """Distances to each centroid, zeroed above the ``sparse_p`` percentile (per patch)."""
    P = np.atleast_2d(np.asarray(patches, dtype=float))
    d = np.sqrt(_sq_dists(P, codebook.centroids))
    t = np.percentile(d, sparse_p, axis=1, method="linear", keepdims=True)
    return np.where(d <= t, d, 0.0)


def encode_sparse(patch, codebook: Codebook, sparse_p: float) -> np.ndarray:
    if not 50 <= sparse_p <= 100:
        raise ValueError("sparse_p must lie in [50, 100]")
    return encode_many(np.atleast_2d(patch), codebook, sparse_p)[0]


def pool_quadrants(codes: np.ndarray) -> np.ndarray:
    """Sum a (g, g, K) code grid over a 2x2 partition; the first half gets ceil(g/2)."""
    g = codes.shape[0]
    h = (g + 1) // 2
    blocks = []
    for rows in (slice(0, h), slice(h, g)):
        for cols in (slice(0, h), slice(h, g)):
            blocks.append(codes[rows, cols].sum(axis=(0, 1)))
    return np.concatenate(blocks)


def featurize_image(image, cfg: dict, zca: ZcaTransform, codebook: Codebook) -> np.ndarray:
    w, s = int(cfg["w"]), min(int(cfg["s"]), int(cfg["w"]))
    grid = extract_patches(image, w, s)
    g = grid.shape[0]
    codes = encode_many(apply_zca(zca, grid.reshape(g * g, -1)), codebook, float(cfg["sparse_p"]))
    return pool_quadrants(codes.reshape(g, g, -1))


# -- regression trees ------------------------------------------------------

@dataclass
class RegressionTree:
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def _add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.value) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.value)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(len(X))
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            f = self.feature[node]
            if f < 0:
                out[idx] = self.value[node]
                continue
            go_left = X[idx, f] <= self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out


def _best_split(Xs, ys, min_leaf):
    """Best variance-reduction split given per-feature sorted values/targets.

    ``Xs`` and ``ys`` have shape (n, J), each column sorted by that feature.
    Returns (gain, feature, threshold) or None.
    """
    n = len(ys)
    cs = np.cumsum(ys, axis=0)
    cq = np.cumsum(ys * ys, axis=0)
    total, total_sq = cs[-1], cq[-1]
    cnt = np.arange(1, n)[:, None]
    ls, lq = cs[:-1], cq[:-1]
    rs, rq = total - ls, total_sq - lq
    sse_left = lq - ls * ls / cnt
    sse_right = rq - rs * rs / (n - cnt)
    parent = total_sq[0] - total[0] ** 2 / n
    gain = parent - sse_left - sse_right
    valid = Xs[1:] > Xs[:-1]
    valid &= (cnt >= min_leaf) & (n - cnt >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    best = gain.max()
    if not np.isfinite(best) or best <= 1e-12 * max(1.0, parent):
        return None
    # lowest feature first, then lowest threshold
    rows, cols = np.nonzero(gain == best)
    j = int(cols.min())
    i = int(rows[cols == j].min())
    return best, j, 0.5 * (Xs[i, j] + Xs[i + 1, j])


def fit_regression_tree(X, y, max_depth: int, min_leaf: int = 1, presorted: np.ndarray | None = None) -> RegressionTree:
    """Greedy least-squares tree with exhaustive midpoint thresholds."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    order = np.argsort(X, axis=0, kind="stable") if presorted is None else presorted
    tree = RegressionTree()
    root = tree._add(y.mean())
    stack = [(root, np.ones(len(y), dtype=bool), 0)]
    while stack:
        node, mask, depth = stack.pop()
        n_node = int(mask.sum())
        if depth >= max_depth or n_node < 2 * min_leaf or n_node < 2:
            continue
        node_order = order.T[mask[order.T]].reshape(X.shape[1], n_node).T
        Xs = np.take_along_axis(X, node_order, axis=0)
        ys = y[node_order]
        split = _best_split(Xs, ys, min_leaf)
        if split is None:
            continue
        _, f, thr = split
        go_left = mask & (X[:, f] <= thr)
        go_right = mask & ~go_left
        tree.feature[node] = f
        tree.threshold[node] = float(thr)
        tree.left[node] = tree._add(y[go_left].mean())
        tree.right[node] = tree._add(y[go_right].mean())
        stack.append((tree.left[node], go_left, depth + 1))
        stack.append((tree.right[node], go_right, depth + 1))
    return tree


# -- gradient boosting -----------------------------------------------------

@dataclass
class BoostedEnsemble:
    F0: float
    gamma: float
    rhos: list = field(default_factory=list)
    trees: list = field(default_factory=list)

    @property
    def M(self) -> int:
        return len(self.trees)


def logistic_loss(y, F) -> float:
    return float(np.logaddexp(0.0, -np.asarray(y) * np.asarray(F)).sum())


def golden_section(f, lo: float, hi: float, steps: int = GOLDEN_STEPS) -> float:
    """Minimize a unimodal ``f`` on [lo, hi]; returns the final bracket midpoint."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(steps):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def boost_fit(X, y, cfg: dict, history: list | None = None) -> BoostedEnsemble:
    """Gradient boosting with logistic loss log(1 + exp(-yF)).

    ``cfg`` holds ``M``, ``gamma``, ``max_depth`` and ``min_leaf``. When
    ``history`` is given it receives the training loss after F0 and after
    each stage.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n_pos, n_neg = int((y == 1).sum()), int((y == -1).sum())
    if len(y) < 2 or n_pos == 0 or n_neg == 0:
        raise ValueError("boosting needs both classes present")
    gamma = float(cfg["gamma"])
    ens = BoostedEnsemble(0.5 * math.log(n_pos / n_neg), gamma)
    F = np.full(len(y), ens.F0)
    order = np.argsort(X, axis=0, kind="stable")
    if history is not None:
        history.append(logistic_loss(y, F))
    for _ in range(int(cfg["M"])):
        d = y / (1.0 + np.exp(y * F))
        tree = fit_regression_tree(X, d, int(cfg["max_depth"]), int(cfg["min_leaf"]), presorted=order)
        g = tree.predict(X)
        base = logistic_loss(y, F)
        rho = golden_section(lambda r: logistic_loss(y, F + r * g), 0.0, RHO_MAX)
        if not logistic_loss(y, F + rho * g) <= base:
            rho = 0.0
        F = F + gamma * rho * g
        ens.rhos.append(rho)
        ens.trees.append(tree)
        if history is not None:
            history.append(logistic_loss(y, F))
    return ens


def ensemble_predict(ens: BoostedEnsemble, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    F = np.full(len(X), ens.F0)
    for rho, tree in zip(ens.rhos, ens.trees):
        F += ens.gamma * rho * tree.predict(X)
    return F


def classify(margin) -> np.ndarray:
    return np.where(np.asarray(margin) >= 0, 1, -1)


# -- benchmark objective ---------------------------------------------------

UNSUP_SPACE = ParamSpace((
    Integer("w", 2, 6),
    Integer("s", 1, 4),
    Integer("K", 4, 64),
    Continuous("log_eps_zca", -3.0, 1.0),
    Continuous("sparse_p", 50.0, 100.0),
))
SUP_SPACE = ParamSpace((
    Integer("M", 10, 200),
    Continuous("gamma", 0.01, 0.5),
    Integer("max_depth", 1, 6),
    Integer("min_leaf", 1, 20),
))
SPACE = ParamSpace(UNSUP_SPACE.params + SUP_SPACE.params)

DEFAULT_CONFIG = {
    "w": 4, "s": 2, "K": 16, "log_eps_zca": -1.0, "sparse_p": 75.0,
    "M": 100, "gamma": 0.1, "max_depth": 3, "min_leaf": 1,
}


def learn_representation(pool: np.ndarray, cfg: dict, seed: int, max_patches: int = 4000):
    """Fit ZCA and the k-means codebook on patches from unlabeled images."""
    rng = np.random.default_rng(seed)
    w, s = int(cfg["w"]), min(int(cfg["s"]), int(cfg["w"]))
    patches = np.concatenate([extract_patches(img, w, s).reshape(-1, w * w) for img in pool])
    if len(patches) > max_patches:
        patches = patches[np.sort(rng.choice(len(patches), max_patches, replace=False))]
    zca = fit_zca(patches, 10.0 ** float(cfg["log_eps_zca"]))
    codebook = kmeans_fit(apply_zca(zca, patches), int(cfg["K"]), seed=seed)
    return zca, codebook


def pipeline_objective(images: ImageSet, lambda_u: dict, lambda_s: dict, seed: int = 0) -> float:
    """Held-out accuracy of boosting on learned features (higher is better).

    The first half of ``images`` is the unlabeled pool; the rest is split
    80/20 with ``seed`` into training and validation sets.
    """
    half = len(images) // 2
    pool, labeled = images.images[:half], images.images[half:]
    labels = images.labels[half:]
    zca, codebook = learn_representation(pool, lambda_u, seed)
    feats = np.stack([featurize_image(img, lambda_u, zca, codebook) for img in labeled])
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(labeled))
    n_train = int(round(0.8 * len(labeled)))
    tr, va = perm[:n_train], perm[n_train:]
    ens = boost_fit(feats[tr], labels[tr], lambda_s)
    return float(np.mean(classify(ensemble_predict(ens, feats[va])) == labels[va]))


def features_objective(images: ImageSet, config: dict, seed: int = 0) -> float:
    lambda_u = {k: config[k] for k in UNSUP_SPACE.names}
    lambda_s = {k: config[k] for k in SUP_SPACE.names}
    return pipeline_objective(images, lambda_u, lambda_s, seed)


_MOTIFS = {
    1: np.array([[1.0, 0.0], [0.0, 1.0]]),
    -1: np.array([[1.0, 1.0], [0.0, 0.0]]),
}


def make_synthetic_images(seed: int = 0, count: int = 400, n: int = 12, class_pattern_contrast: float = 1.0,
                          noise_sd: float = 0.5) -> ImageSet:
    """Checkerboard (+1) versus horizontal-stripe (-1) textures in noise.

    Each image gets a random phase, amplitude and brightness, so the class
    is carried by local texture rather than by any fixed pixel.
    """
    rng = np.random.default_rng(seed)
    labels = np.array([1] * (count // 2) + [-1] * (count - count // 2))
    labels = labels[rng.permutation(count)]
    reps = (n + 1) // 2 + 1
    images = np.empty((count, n, n))
    for k, c in enumerate(labels):
        tile = np.tile(_MOTIFS[int(c)], (reps, reps))
        dy, dx = rng.integers(2), rng.integers(2)
        pattern = tile[dy:dy + n, dx:dx + n] - 0.5
        amp = rng.uniform(0.5, 1.0)
        bright = rng.uniform(-0.1, 0.1)
        img = 0.5 + bright + 0.5 * class_pattern_contrast * amp * pattern + noise_sd * rng.standard_normal((n, n))
        images[k] = np.clip(img, 0.0, 1.0)
    return ImageSet(images, labels)


def write_images(images: ImageSet, path) -> None:
    n2 = images.n ** 2
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label," + ",".join(f"p{i}" for i in range(n2)) + "\n")
        for img, label in zip(images.images, images.labels):
            fh.write(f"{int(label)}," + ",".join(repr(float(v)) for v in img.ravel()) + "\n")


def read_images(path) -> ImageSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    if header[0] != "label":
        raise ValueError(f"{path}: expected header starting with 'label'")
    n2 = len(header) - 1
    n = int(round(math.sqrt(n2)))
    if n * n != n2:
        raise ValueError(f"{path}: {n2} pixel columns is not a square image")
    rows = [line.split(",") for line in lines[1:] if line.strip()]
    labels = [int(r[0]) for r in rows]
    pix = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(-1, n, n)
    return ImageSet(pix, labels)
