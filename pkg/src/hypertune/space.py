"""Mixed parameter spaces and their unit-cube embedding.

A :class:`ParamSpace` is an ordered tuple of parameter definitions. The order
fixes the coordinate layout of the unit-cube embedding used by the surrogate:
continuous and integer parameters take one coordinate each, categorical
parameters a one-hot block of ``len(levels)`` coordinates.

Configurations are plain ``dict`` objects mapping parameter name to value.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

Configuration = dict


@dataclass(frozen=True)
class Continuous:
    name: str
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"{self.name}: bounds must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise ValueError(f"{self.name}: log scale requires lo > 0")

    @property
    def width(self) -> int:
        return 1

    def _fwd(self, v):
        return np.log(v) if self.log else v

    def _inv(self, u):
        return np.exp(u) if self.log else u


@dataclass(frozen=True)
class Integer:
    name: str
    lo: int
    hi: int

    def __post_init__(self):
        if int(self.lo) != self.lo or int(self.hi) != self.hi:
            raise ValueError(f"{self.name}: integer bounds must be integral")
        object.__setattr__(self, "lo", int(self.lo))
        object.__setattr__(self, "hi", int(self.hi))
        if self.lo > self.hi:
            raise ValueError(f"{self.name}: need lo <= hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> int:
        return 1

    @property
    def span(self) -> int:
        return self.hi - self.lo + 1


@dataclass(frozen=True)
class Categorical:
    name: str
    levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"{self.name}: duplicate levels")
        if len(self.levels) < 2:
            raise ValueError(f"{self.name}: need at least 2 levels")

    @property
    def width(self) -> int:
        return len(self.levels)


ParamDef = Continuous | Integer | Categorical


@dataclass(frozen=True)
class ParamSpace:
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def unit_dim(self) -> int:
        return sum(p.width for p in self.params)

    def __len__(self):
        return len(self.params)

    def __getitem__(self, name: str) -> ParamDef:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def without(self, names: Iterable[str]) -> "ParamSpace":
        drop = set(names)
        return ParamSpace(tuple(p for p in self.params if p.name not in drop))

    # -- serialization -------------------------------------------------

    def to_json(self) -> dict:
        out = []
        for p in self.params:
            if isinstance(p, Continuous):
                out.append({"name": p.name, "type": "continuous", "lo": p.lo, "hi": p.hi, "log": p.log})
            elif isinstance(p, Integer):
                out.append({"name": p.name, "type": "integer", "lo": p.lo, "hi": p.hi})
            else:
                out.append({"name": p.name, "type": "categorical", "levels": list(p.levels)})
        return {"params": out}

    @classmethod
    def from_json(cls, obj: dict | str) -> "ParamSpace":
        if isinstance(obj, str):
            obj = json.loads(obj)
        params = []
        for d in obj["params"]:
            kind = d["type"]
            if kind == "continuous":
                params.append(Continuous(d["name"], float(d["lo"]), float(d["hi"]), bool(d.get("log", False))))
            elif kind == "integer":
                params.append(Integer(d["name"], d["lo"], d["hi"]))
            elif kind == "categorical":
                params.append(Categorical(d["name"], tuple(d["levels"])))
            else:
                raise ValueError(f"unknown parameter type {kind!r}")
        return cls(tuple(params))


def validate(space: ParamSpace, config: dict) -> list[str]:
    """Return every domain violation of ``config``; an empty list means valid."""
    problems = []
    known = set(space.names)
    for name in config:
        if name not in known:
            problems.append(f"{name}: unknown parameter")
    for p in space.params:
        if p.name not in config:
            problems.append(f"{p.name}: missing value")
            continue
        v = config[p.name]
        if isinstance(p, Categorical):
            if v not in p.levels:
                problems.append(f"{p.name}: unknown level {v!r}")
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
            problems.append(f"{p.name}: non-numeric value {v!r}")
            continue
        if not math.isfinite(v):
            problems.append(f"{p.name}: non-finite value")
            continue
        if isinstance(p, Integer) and v != int(v):
            problems.append(f"{p.name}: non-integral value {v!r}")
        if v < p.lo or v > p.hi:
            problems.append(f"{p.name} out of range [{p.lo}, {p.hi}]: {v!r}")
    return problems


def is_valid(space: ParamSpace, config: dict) -> bool:
    return not validate(space, config)


def sample_uniform(space: ParamSpace, rng: np.random.Generator) -> dict:
    config = {}
    for p in space.params:
        if isinstance(p, Continuous):
            if p.log:
                v = math.exp(rng.uniform(math.log(p.lo), math.log(p.hi)))
                v = min(max(v, p.lo), p.hi)
            else:
                v = float(rng.uniform(p.lo, p.hi))
            config[p.name] = v
        elif isinstance(p, Integer):
            config[p.name] = int(rng.integers(p.lo, p.hi + 1))
        else:
            config[p.name] = p.levels[int(rng.integers(len(p.levels)))]
    return config


def _grid_size(space: ParamSpace, g: int) -> int:
    size = 1
    for p in space.params:
        if isinstance(p, Continuous):
            size *= g
        elif isinstance(p, Integer):
            size *= min(g, p.span)
        else:
            size *= len(p.levels)
    return size


def _levels(p: ParamDef, g: int) -> list:
    if isinstance(p, Categorical):
        return list(p.levels)
    if isinstance(p, Integer):
        if p.span <= g:
            return list(range(p.lo, p.hi + 1))
        if g == 1:
            return [int(round((p.lo + p.hi) / 2))]
        return sorted({int(round(v)) for v in np.linspace(p.lo, p.hi, g)})
    if g == 1:
        mid = p._inv((p._fwd(p.lo) + p._fwd(p.hi)) / 2)
        return [float(mid)]
    vals = p._inv(np.linspace(p._fwd(p.lo), p._fwd(p.hi), g))
    vals[0], vals[-1] = p.lo, p.hi
    return [float(v) for v in vals]


def grid(space: ParamSpace, target_count: int, rng: np.random.Generator) -> list[dict]:
    """Evenly spaced Cartesian grid of at most ``target_count`` points, shuffled.

    The per-dimension level count ``g`` is the largest integer whose full
    product fits the target. Integer parameters with fewer than ``g`` values
    use all of them.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    if not space.params:
        return [{}]
    has_scalable = any(isinstance(p, Continuous) or (isinstance(p, Integer) and p.span > 1) for p in space.params)
    g = 1
    if has_scalable:
        while _grid_size(space, g + 1) <= target_count and _grid_size(space, g + 1) > _grid_size(space, g):
            g += 1
    axes = [_levels(p, g) for p in space.params]
    configs = [dict(zip(space.names, combo)) for combo in itertools.product(*axes)]
    order = rng.permutation(len(configs))
    return [configs[i] for i in order[:target_count]]


def to_unit(space: ParamSpace, config: dict) -> np.ndarray:
    out = np.zeros(space.unit_dim)
    k = 0
    for p in space.params:
        v = config[p.name]
        if isinstance(p, Continuous):
            lo, hi = p._fwd(p.lo), p._fwd(p.hi)
            out[k] = (p._fwd(v) - lo) / (hi - lo)
        elif isinstance(p, Integer):
            out[k] = (v - p.lo + 0.5) / p.span
        else:
            out[k + p.levels.index(v)] = 1.0
        k += p.width
    return out


def from_unit(space: ParamSpace, u: Sequence[float]) -> dict:
    u = np.asarray(u, dtype=float)
    if u.shape != (space.unit_dim,):
        raise ValueError(f"expected unit vector of length {space.unit_dim}, got shape {u.shape}")
    u = np.clip(u, 0.0, 1.0)
    config = {}
    k = 0
    for p in space.params:
        if isinstance(p, Continuous):
            lo, hi = p._fwd(p.lo), p._fwd(p.hi)
            v = float(p._inv(lo + u[k] * (hi - lo)))
            config[p.name] = min(max(v, p.lo), p.hi)
        elif isinstance(p, Integer):
            config[p.name] = p.lo + min(int(math.floor(u[k] * p.span)), p.span - 1)
        else:
            block = u[k:k + p.width]
            config[p.name] = p.levels[int(np.argmax(block))]
        k += p.width
    return config


def snap_unit(space: ParamSpace, U: np.ndarray) -> np.ndarray:
    """Vectorized ``to_unit(from_unit(row))`` for a batch of unit vectors.

    Continuous coordinates are only clamped; the round trip through native
    scale would change them by at most a few ulps.
    """
    U = np.clip(np.atleast_2d(np.asarray(U, dtype=float)), 0.0, 1.0)
    out = U.copy()
    k = 0
    for p in space.params:
        if isinstance(p, Integer):
            idx = np.minimum(np.floor(U[:, k] * p.span), p.span - 1)
            out[:, k] = (idx + 0.5) / p.span
        elif isinstance(p, Categorical):
            block = U[:, k:k + p.width]
            hot = np.zeros_like(block)
            hot[np.arange(len(block)), np.argmax(block, axis=1)] = 1.0
            out[:, k:k + p.width] = hot
        k += p.width
    return out


def config_key(space: ParamSpace, config: dict) -> tuple:
    """Hashable identity of a configuration, in parameter order."""
    return tuple(config[n] for n in space.names)


def coerce(space: ParamSpace, config: dict[str, Any]) -> dict:
    """Normalize JSON-loaded values (e.g. ``3.0`` for an integer) to native types."""
    out = {}
    for p in space.params:
        v = config[p.name]
        if isinstance(p, Integer):
            v = int(v)
        elif isinstance(p, Continuous):
            v = float(v)
        out[p.name] = v
    return out
