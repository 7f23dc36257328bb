"""N-gram bag-of-words logistic regression with an elastic-net penalty.

The tunable objective is the mean validation accuracy over ``k`` random
70/30 train/validation splits. The vocabulary is rebuilt from each training
split, so validation documents never influence feature selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import sparse

from ..space import Continuous, Integer, ParamSpace


class VocabularyEmpty(ValueError):
    pass


@dataclass(frozen=True)
class Corpus:
    docs: tuple
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "docs", tuple(tuple(d) for d in self.docs))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))
        if len(self.docs) != len(self.labels):
            raise ValueError("docs and labels differ in length")
        if any(len(d) == 0 for d in self.docs):
            raise ValueError("empty document")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")

    def __len__(self):
        return len(self.docs)

    def subset(self, idx) -> "Corpus":
        return Corpus([self.docs[i] for i in idx], self.labels[np.asarray(idx, dtype=int)])


@dataclass(frozen=True)
class NgramVocab:
    entries: dict
    n_min: int
    n_max: int
    min_df_frac: float
    max_df_frac: float

    def __len__(self):
        return len(self.entries)


class BowVector(NamedTuple):
    indices: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class LrParams:
    weights: np.ndarray
    intercept: float = 0.0


SPACE = ParamSpace((
    Integer("min_n_gram", 1, 2),
    Integer("ngram_offset", 0, 2),
    Continuous("log_min_df", -4.0, -1.0),
    Continuous("df_offset", 0.05, 0.9),
    Continuous("log_alpha", -6.0, -1.0),
    Continuous("rho", 0.0, 1.0),
))

# Library-default stand-in: unigrams, no df filtering to speak of, alpha=1e-4, l1 ratio 0.15.
DEFAULT_CONFIG = {
    "min_n_gram": 1,
    "ngram_offset": 0,
    "log_min_df": -4.0,
    "df_offset": 0.9,
    "log_alpha": -4.0,
    "rho": 0.15,
}


def extract_ngrams(tokens: Sequence[str], n: int) -> list[str]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return ["_".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def _doc_ngrams(tokens, n_min, n_max):
    out = []
    for n in range(n_min, n_max + 1):
        out.extend(extract_ngrams(tokens, n))
    return out


def build_vocab(corpus: Corpus | Sequence[Sequence[str]], n_min: int, n_max: int,
                min_df_frac: float, max_df_frac: float) -> NgramVocab:
    """Keep n-grams whose document-frequency fraction lies in [min_df_frac, max_df_frac]."""
    if not 0 < min_df_frac <= max_df_frac <= 1:
        raise ValueError("need 0 < min_df_frac <= max_df_frac <= 1")
    if n_min < 1 or n_min > n_max:
        raise ValueError("need 1 <= n_min <= n_max")
    docs = corpus.docs if isinstance(corpus, Corpus) else corpus
    df: dict[str, int] = {}
    for tokens in docs:
        for g in set(_doc_ngrams(tokens, n_min, n_max)):
            df[g] = df.get(g, 0) + 1
    n_docs = len(docs)
    # small tolerance so that e.g. 2/100 counts as >= 0.02
    tol = 1e-12
    kept = sorted(g for g, c in df.items() if min_df_frac - tol <= c / n_docs <= max_df_frac + tol)
    if not kept:
        raise VocabularyEmpty("vocabulary empty")
    return NgramVocab({g: i for i, g in enumerate(kept)}, n_min, n_max, min_df_frac, max_df_frac)


def vectorize(vocab: NgramVocab, tokens: Sequence[str]) -> BowVector:
    counts: dict[int, int] = {}
    for g in _doc_ngrams(tokens, vocab.n_min, vocab.n_max):
        idx = vocab.entries.get(g)
        if idx is not None:
            counts[idx] = counts.get(idx, 0) + 1
    idx = np.array(sorted(counts), dtype=np.int64)
    return BowVector(idx, np.array([counts[i] for i in idx], dtype=float))


def to_matrix(vectors: Sequence[BowVector], dim: int) -> sparse.csr_matrix:
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(v.indices) for v in vectors])
    if vectors:
        indices = np.concatenate([v.indices for v in vectors]) if indptr[-1] else np.zeros(0, dtype=np.int64)
        data = np.concatenate([v.counts for v in vectors]) if indptr[-1] else np.zeros(0)
    else:
        indices, data = np.zeros(0, dtype=np.int64), np.zeros(0)
    return sparse.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))


def _as_matrix(X):
    return X if sparse.issparse(X) else np.atleast_2d(np.asarray(X, dtype=float))


def margins(params: LrParams, X) -> np.ndarray:
    return np.asarray(_as_matrix(X) @ params.weights).ravel() + params.intercept


def lr_objective_value(params: LrParams, X, y, alpha: float, rho: float) -> float:
    """Mean logistic loss plus the elastic-net penalty (intercept unpenalized)."""
    y = np.asarray(y, dtype=float)
    data = np.logaddexp(0.0, -y * margins(params, X)).mean()
    w = params.weights
    penalty = alpha * ((1.0 - rho) / 2.0 * float(w @ w) + rho * float(np.abs(w).sum()))
    return float(data + penalty)


def example_gradient(params: LrParams, x: np.ndarray, y: float) -> tuple[np.ndarray, float]:
    """Gradient of log(1 + exp(-y (w.x + b))) in (w, b) for one dense example."""
    m = y * (float(x @ params.weights) + params.intercept)
    s = -y * _sigmoid(-m)
    return s * x, s


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def train_sgd(X, y, alpha: float, rho: float, epochs: int = 5, eta0: float = 0.5, seed: int = 0,
              history: list | None = None) -> LrParams:
    """Per-example SGD on the elastic-net logistic loss.

    Step size decays as ``eta0 / (1 + t / M)``; the L1 term uses the
    subgradient ``sign(w)``. If ``history`` is given, the full objective is
    appended to it after every epoch.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    X = sparse.csr_matrix(_as_matrix(X))
    y = np.asarray(y, dtype=float)
    M, V = X.shape
    w = np.zeros(V)
    b = 0.0
    rng = np.random.default_rng(seed)
    l2 = alpha * (1.0 - rho)
    l1 = alpha * rho
    indptr, indices, data = X.indptr, X.indices, X.data
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(M):
            eta = eta0 / (1.0 + t / M)
            lo, hi = indptr[i], indptr[i + 1]
            cols, vals = indices[lo:hi], data[lo:hi]
            m = y[i] * (float(vals @ w[cols]) + b)
            s = -y[i] * _sigmoid(-m)
            if l1 or l2:
                w -= eta * (l2 * w + l1 * np.sign(w))
            w[cols] -= eta * s * vals
            b -= eta * s
            t += 1
        if history is not None:
            history.append(lr_objective_value(LrParams(w.copy(), b), X, y, alpha, rho))
    return LrParams(w, b)


def accuracy(params: LrParams, X, y) -> float:
    y = np.asarray(y)
    pred = np.where(margins(params, X) >= 0, 1, -1)
    return float(np.mean(pred == y))


def derived_settings(config: dict) -> dict:
    n_min = int(config["min_n_gram"])
    min_df = 10.0 ** float(config["log_min_df"])
    return {
        "n_min": n_min,
        "n_max": n_min + int(config["ngram_offset"]),
        "min_df_frac": min_df,
        "max_df_frac": min(1.0, min_df + float(config["df_offset"])),
        "alpha": 10.0 ** float(config["log_alpha"]),
        "rho": float(config["rho"]),
    }


def split_accuracy(train: Corpus, valid: Corpus, config: dict, seed: int, epochs: int = 5) -> float:
    s = derived_settings(config)
    vocab = build_vocab(train, s["n_min"], s["n_max"], s["min_df_frac"], s["max_df_frac"])
    Xt = to_matrix([vectorize(vocab, d) for d in train.docs], len(vocab))
    Xv = to_matrix([vectorize(vocab, d) for d in valid.docs], len(vocab))
    params = train_sgd(Xt, train.labels, s["alpha"], s["rho"], epochs=epochs, seed=seed)
    return accuracy(params, Xv, valid.labels)


def cv_objective(corpus: Corpus, config: dict, k: int = 5, train_frac: float = 0.7, seed: int = 0,
                 epochs: int = 5) -> float:
    """Mean validation accuracy over ``k`` seeded random train/validation splits."""
    if len(corpus) < 10:
        raise ValueError("corpus needs at least 10 documents")
    rng = np.random.default_rng(seed)
    n_train = int(round(train_frac * len(corpus)))
    accs = []
    for fold in range(k):
        perm = rng.permutation(len(corpus))
        train, valid = corpus.subset(perm[:n_train]), corpus.subset(perm[n_train:])
        accs.append(split_accuracy(train, valid, config, seed=seed * 1000 + fold, epochs=epochs))
    return float(sum(accs) / k)


def make_synthetic_corpus(seed: int = 0, n_docs: int = 400, vocab_size: int = 500, doc_len: int = 12,
                          class_skew: float = 0.9, negation_rate: float = 0.3) -> Corpus:
    """Two-class corpus over a shared Zipf vocabulary.

    A fifth of the tokens lean positive and a fifth lean negative; class ``c``
    draws token ``t`` with probability proportional to
    ``zipf(t) * (1 + class_skew * c * polarity(t))``. With probability
    ``negation_rate`` a token is instead drawn from the opposite class and
    emitted after ``"not"``, so unigrams alone blur the classes and bigrams
    such as ``not_w0042`` recover the signal.
    """
    if not 0 <= class_skew < 1:
        raise ValueError("class_skew must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    base = 1.0 / np.arange(1, vocab_size + 1) ** 1.05
    polarity = np.zeros(vocab_size)
    marked = rng.permutation(vocab_size)
    fifth = vocab_size // 5
    polarity[marked[:fifth]] = 1.0
    polarity[marked[fifth:2 * fifth]] = -1.0
    names = [f"w{i:04d}" for i in range(vocab_size)]
    probs = {}
    for c in (-1, 1):
        p = base * (1.0 + class_skew * c * polarity)
        probs[c] = p / p.sum()
    labels = np.array([1] * (n_docs // 2) + [-1] * (n_docs - n_docs // 2))
    labels = labels[rng.permutation(n_docs)]
    docs = []
    for c in labels:
        c = int(c)
        negate = rng.uniform(size=doc_len) < negation_rate
        plain = rng.choice(vocab_size, size=doc_len, p=probs[c])
        flipped = rng.choice(vocab_size, size=doc_len, p=probs[-c])
        toks = []
        for neg, a, b in zip(negate, plain, flipped):
            if neg:
                toks += ["not", names[b]]
            else:
                toks.append(names[a])
        docs.append(toks)
    return Corpus(docs, labels)


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, label in zip(corpus.docs, corpus.labels):
            fh.write(f"{int(label)}\t{' '.join(tokens)}\n")


def read_corpus(path) -> Corpus:
    docs, labels = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        label, _, text = line.partition("\t")
        if label.strip() not in ("-1", "1"):
            raise ValueError(f"{path}:{lineno}: label must be -1 or 1")
        docs.append(text.lower().split())
        labels.append(int(label))
    return Corpus(docs, labels)
