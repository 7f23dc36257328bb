"""Cross-seed statistics for comparing optimization strategies."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

EXACT_MAX_N = 16
EXACT_MAX_TIE_GROUPS = 2


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_two_sided: float
    method: str  # "exact" or "normal-approx"


def midranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_p(ranks: np.ndarray, n: int, observed_dev: float) -> float:
    N = len(ranks)
    m = N - n
    center = n * m / 2.0
    offset = n * (n + 1) / 2.0
    hits = total = 0
    for combo in itertools.combinations(range(N), n):
        u = ranks[list(combo)].sum() - offset
        total += 1
        if abs(u - center) >= observed_dev - 1e-9:
            hits += 1
    return hits / total


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> UTestResult:
    """Two-sided unpaired Mann-Whitney U test; U is reported for sample ``a``.

    Exact enumeration over all splits of the pooled midranks is used when
    the pooled size is at most 16 with at most two groups of ties; otherwise
    a tie-corrected normal approximation with continuity correction.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    n, m = len(a), len(b)
    if n < 2 or m < 2:
        raise ValueError("each sample needs at least 2 values")
    pooled = a + b
    N = n + m
    ranks = midranks(pooled)
    u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    if len(set(pooled)) == 1:
        return UTestResult(u, 1.0, "exact")

    tie_sizes = [c for c in Counter(pooled).values() if c > 1]
    dev = abs(u - n * m / 2.0)
    if N <= EXACT_MAX_N and len(tie_sizes) <= EXACT_MAX_TIE_GROUPS:
        return UTestResult(u, min(1.0, _exact_p(ranks, n, dev)), "exact")

    tie_term = sum(t**3 - t for t in tie_sizes) / (N * (N - 1))
    var = n * m / 12.0 * ((N + 1) - tie_term)
    if var <= 0:
        return UTestResult(u, 1.0, "normal-approx")
    z = max(dev - 0.5, 0.0) / math.sqrt(var)
    p = 2.0 * float(ndtr(-z))
    return UTestResult(u, min(1.0, p), "normal-approx")


def final_best(trace) -> float:
    best = trace.best_seen[-1] if hasattr(trace, "best_seen") else trace[-1]
    return float(best)


def best_found_summary(runset: dict) -> dict:
    """Mean, median and sample sd of final best-seen values per strategy.

    ``runset`` maps strategy name to a list of traces (or best-seen lists).
    """
    out = {}
    for name, traces in runset.items():
        finals = np.array([final_best(t) for t in traces])
        out[name] = {
            "n": len(finals),
            "mean": float(finals.mean()),
            "median": float(np.median(finals)),
            "sd": float(finals.std(ddof=1)) if len(finals) > 1 else 0.0,
        }
    return out


def iqr_trace(traces) -> dict:
    """Per-evaluation 25th/50th/75th percentiles of best-seen across runs."""
    curves = np.array([t.best_seen if hasattr(t, "best_seen") else t for t in traces], dtype=float)
    q25, med, q75 = np.percentile(curves, [25, 50, 75], axis=0, method="linear")
    return {"q25": q25.tolist(), "median": med.tolist(), "q75": q75.tolist()}


def relative_improvement(value: float, baseline: float) -> float:
    """Percent change of ``value`` over ``baseline``, signed, relative to |baseline|."""
    if baseline == 0:
        raise ZeroDivisionError("baseline is zero")
    return 100.0 * (value - baseline) / abs(baseline)
