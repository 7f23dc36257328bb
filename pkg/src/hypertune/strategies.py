"""Sequential suggest/observe optimization with random, grid and GP-EI strategies.

Everything maximizes. Callers with a loss to minimize negate it first.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import gp
from .space import ParamSpace, config_key, from_unit, grid, sample_uniform, snap_unit, to_unit

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("random", "grid", "bayes")
DEFAULT_GRID_SIZE = 64


class GridExhausted(RuntimeError):
    pass


@dataclass
class Observation:
    config: dict
    value: float
    eval_index: int
    failed: bool = False


@dataclass
class Trace:
    strategy: str
    seed: int
    observations: list = field(default_factory=list)
    best_seen: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)

    def record(self, config: dict, value: float | None, seconds: float):
        failed = value is None or not math.isfinite(value)
        obs = Observation(dict(config), float("nan") if failed else float(value), len(self.observations), failed)
        self.observations.append(obs)
        prev = self.best_seen[-1] if self.best_seen else -math.inf
        self.best_seen.append(prev if failed else max(prev, obs.value))
        self.wall_times.append(seconds)
        return obs

    @property
    def values(self) -> list:
        return [o.value for o in self.observations]

    @property
    def best_observation(self) -> Observation | None:
        best = None
        for o in self.observations:
            if not o.failed and (best is None or o.value > best.value):
                best = o
        return best

    def __len__(self):
        return len(self.observations)


class Strategy:
    name = ""

    def __init__(self, space: ParamSpace, seed: int):
        self.space = space
        self.rng = np.random.default_rng(seed)
        self.history: list[Observation] = []

    def suggest(self) -> dict:
        raise NotImplementedError

    def observe(self, config: dict, value: float | None) -> Observation:
        failed = value is None or not math.isfinite(value)
        obs = Observation(dict(config), float("nan") if failed else float(value), len(self.history), failed)
        self.history.append(obs)
        return obs


class RandomSearch(Strategy):
    name = "random"

    def suggest(self) -> dict:
        return sample_uniform(self.space, self.rng)


class GridSearch(Strategy):
    """Walks a shuffled evenly spaced grid; raises once the grid is used up."""

    name = "grid"

    def __init__(self, space: ParamSpace, seed: int, target_count: int = DEFAULT_GRID_SIZE):
        super().__init__(space, seed)
        self.queue = grid(space, target_count, self.rng)
        self.cursor = 0

    def suggest(self) -> dict:
        if self.cursor >= len(self.queue):
            raise GridExhausted("budget exceeds grid size")
        config = self.queue[self.cursor]
        self.cursor += 1
        return dict(config)


def latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points in [0,1]^d with exactly one point per stratum on every axis."""
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    return (strata + rng.uniform(size=(n, d))) / n


class BayesOpt(Strategy):
    """GP-EI: a Latin hypercube warm-up, then argmax EI over random candidates."""

    name = "bayes"

    def __init__(self, space: ParamSpace, seed: int, xi: float = 0.01, candidates_per_suggest: int = 2048,
                 local_candidates: int = 64, local_sd: float = 0.05, restarts: int = 8):
        super().__init__(space, seed)
        self.xi = xi
        self.candidates_per_suggest = candidates_per_suggest
        self.local_candidates = local_candidates
        self.local_sd = local_sd
        self.restarts = restarts
        d = space.unit_dim
        self.init_design = [from_unit(space, u) for u in latin_hypercube(max(2 * d, 4), d, self.rng)]
        self.model: gp.GpModel | None = None

    def surrogate_targets(self) -> np.ndarray:
        """Observed values with failures imputed one unit below the current worst."""
        ok = [o.value for o in self.history if not o.failed]
        fill = (min(ok) if ok else 0.0) - 1.0
        return np.array([fill if o.failed else o.value for o in self.history])

    def suggest(self) -> dict:
        seen = {config_key(self.space, o.config) for o in self.history}
        while self.init_design:
            config = self.init_design.pop(0)
            if config_key(self.space, config) not in seen or not self.history:
                return config
        if len(self.history) < 2:
            return sample_uniform(self.space, self.rng)

        X = np.array([to_unit(self.space, o.config) for o in self.history])
        y = self.surrogate_targets()
        self.model = gp.gp_fit(X, y, restarts=self.restarts, rng=self.rng)
        incumbent = X[int(np.argmax(y))]

        d = self.space.unit_dim
        cands = np.vstack([
            self.rng.uniform(size=(self.candidates_per_suggest, d)),
            np.clip(incumbent + self.local_sd * self.rng.standard_normal((self.local_candidates, d)), 0.0, 1.0),
        ])
        cands = snap_unit(self.space, cands)
        ei = gp.expected_improvement(self.model, cands, float(y.max()), self.xi * self.model.target_sd)
        # stable sort keeps the lowest index first among ties
        for idx in np.argsort(-ei, kind="stable"):
            config = from_unit(self.space, cands[idx])
            if config_key(self.space, config) not in seen:
                return config
        logger.debug("every candidate already evaluated; falling back to a random draw")
        return sample_uniform(self.space, self.rng)


def make_strategy(kind: str, space: ParamSpace, seed: int, budget: int | None = None, **options) -> Strategy:
    if kind == "random":
        return RandomSearch(space, seed)
    if kind == "grid":
        target = options.pop("grid_size", DEFAULT_GRID_SIZE)
        if budget is not None:
            target = max(target, budget)
            # grow the target when integer saturation leaves the grid short of the budget
            probe = GridSearch(space, seed, target)
            while len(probe.queue) < budget and target < 64 * budget:
                target *= 2
                probe = GridSearch(space, seed, target)
            return probe
        return GridSearch(space, seed, target)
    if kind == "bayes":
        return BayesOpt(space, seed, **options)
    raise ValueError(f"unknown strategy {kind!r}; expected one of {STRATEGY_KINDS}")


def run_loop(kind: str, space: ParamSpace, objective: Callable[[dict], float], budget: int, seed: int,
             **options) -> Trace:
    """Run ``budget`` sequential evaluations of ``objective`` and return the trace.

    An objective that raises or returns a non-finite value is recorded as a
    failed evaluation and the loop continues.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    strategy = make_strategy(kind, space, seed, budget=budget, **options)
    trace = Trace(kind, seed)
    for _ in range(budget):
        config = strategy.suggest()
        t0 = time.perf_counter()
        try:
            value = float(objective(dict(config)))
        except Exception as exc:  # noqa: BLE001 - any objective fault is a failed evaluation
            logger.info("evaluation %d failed: %s", len(trace), exc)
            value = None
        elapsed = time.perf_counter() - t0
        strategy.observe(config, value)
        trace.record(config, value, elapsed)
    return trace
