"""Experiment configuration, per-seed runs and JSON run artifacts.

A run artifact lives at ``<outdir>/<benchmark>/<strategy>/seed-<s>.json``
and holds nothing that varies between identical reruns. Wall-clock
timings go to a sidecar ``seed-<s>.timing.json`` next to it.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..space import coerce, validate
from ..strategies import STRATEGY_KINDS, Observation, Trace, run_loop
from .registry import get_benchmark

OUT_ENV = "HYPERTUNE_OUT"
DEFAULT_OUT = "runs"

_CONFIG_KEYS = {"benchmark", "strategy", "budget", "seeds", "dataset", "overrides", "options"}


class ConfigError(ValueError):
    """The experiment description is malformed."""


class HarnessError(RuntimeError):
    """A run or report could not be carried out."""


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: str
    strategy: str
    budget: int
    seeds: tuple
    dataset: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)  # extra keyword arguments for the strategy

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(self.seeds))
        try:
            bench = get_benchmark(self.benchmark)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        if self.strategy not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGY_KINDS)}")
        if isinstance(self.budget, bool) or not isinstance(self.budget, int) or self.budget < 1:
            raise ConfigError("budget must be an integer >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        unknown = sorted(set(self.overrides) - set(bench.space.names))
        if unknown:
            raise ConfigError(f"overrides name unknown parameters {unknown}; valid: {bench.space.names}")
        fixed = bench.space.without(set(bench.space.names) - set(self.overrides))
        problems = validate(fixed, self.overrides)
        if problems:
            raise ConfigError("invalid overrides: " + "; ".join(problems))
        if len(self.overrides) == len(bench.space):
            raise ConfigError("overrides fix every parameter; nothing left to tune")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = sorted(set(obj) - _CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        missing = [k for k in ("benchmark", "strategy", "budget", "seeds") if k not in obj]
        if missing:
            raise ConfigError(f"missing config keys {missing}")
        seeds = obj["seeds"]
        if not isinstance(seeds, list):
            raise ConfigError("seeds must be a list of integers")
        for key in ("dataset", "overrides", "options"):
            if not isinstance(obj.get(key, {}), dict):
                raise ConfigError(f"{key} must be a JSON object")
        return cls(obj["benchmark"], obj["strategy"], obj["budget"], tuple(seeds),
                   dict(obj.get("dataset", {})), dict(obj.get("overrides", {})), dict(obj.get("options", {})))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        out = {
            "benchmark": self.benchmark,
            "strategy": self.strategy,
            "budget": self.budget,
            "seeds": list(self.seeds),
            "dataset": dict(self.dataset),
            "overrides": dict(self.overrides),
        }
        if self.options:
            out["options"] = dict(self.options)
        return out


@dataclass
class RunArtifact:
    config: dict  # experiment config echo with a single "seed"
    trace: Trace
    best_config: dict | None
    timing: list
    tool_version: str = __version__

    @property
    def benchmark(self) -> str:
        return self.config["benchmark"]

    @property
    def strategy(self) -> str:
        return self.config["strategy"]

    @property
    def seed(self) -> int:
        return self.config["seed"]

    @property
    def budget(self) -> int:
        return self.config["budget"]

    @property
    def best_seen(self) -> list:
        return self.trace.best_seen

    def to_json(self) -> dict:
        evals = []
        for obs, best in zip(self.trace.observations, self.trace.best_seen):
            evals.append({
                "eval_index": obs.eval_index,
                "config": obs.config,
                "value": None if obs.failed else obs.value,
                "failed": obs.failed,
                "best_seen": best if math.isfinite(best) else None,
            })
        return {
            "tool_version": self.tool_version,
            "config": self.config,
            "best_config": self.best_config,
            "best_value": _finite_or_none(self.trace.best_seen[-1]) if self.trace.best_seen else None,
            "evaluations": evals,
        }

    @classmethod
    def from_json(cls, obj: dict, timing: list | None = None) -> "RunArtifact":
        config = obj["config"]
        trace = Trace(config["strategy"], config["seed"])
        for e in obj["evaluations"]:
            failed = bool(e["failed"])
            value = math.nan if failed else float(e["value"])
            trace.observations.append(Observation(e["config"], value, int(e["eval_index"]), failed))
            trace.best_seen.append(-math.inf if e["best_seen"] is None else float(e["best_seen"]))
        timing = list(timing) if timing is not None else []
        trace.wall_times = timing
        return cls(config, trace, obj["best_config"], timing, obj.get("tool_version", ""))


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None


def artifact_bytes(artifact: RunArtifact) -> bytes:
    return (json.dumps(artifact.to_json(), sort_keys=True, indent=1, allow_nan=False) + "\n").encode("utf-8")


def artifact_path(outdir, benchmark: str, strategy: str, seed: int) -> Path:
    return Path(outdir) / benchmark / strategy / f"seed-{seed}.json"


def _timing_path(path: Path) -> Path:
    return path.with_name(path.stem + ".timing.json")


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_artifact(artifact: RunArtifact, outdir) -> Path:
    path = artifact_path(outdir, artifact.benchmark, artifact.strategy, artifact.seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, artifact_bytes(artifact))
    timing = json.dumps({"seconds": artifact.timing}, indent=1) + "\n"
    _atomic_write(_timing_path(path), timing.encode("utf-8"))
    return path


def read_artifact(path) -> RunArtifact:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise HarnessError(f"cannot read artifact {path}: {exc}") from None
    timing = None
    tpath = _timing_path(path)
    if tpath.exists():
        timing = json.loads(tpath.read_text(encoding="utf-8")).get("seconds")
    return RunArtifact.from_json(obj, timing)


def resolve_outdir(outdir=None) -> Path:
    if outdir is not None:
        return Path(outdir)
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _check_writable(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        fd, probe = tempfile.mkstemp(dir=directory, prefix=".probe-")
        os.close(fd)
        os.unlink(probe)
    except OSError as exc:
        raise HarnessError(f"output directory {directory} is not writable: {exc.strerror or exc}") from None


def run_single(config: ExperimentConfig, seed: int, data=None) -> RunArtifact:
    """Run one seed of ``config`` without touching the filesystem."""
    bench = get_benchmark(config.benchmark)
    if data is None:
        data = bench.load_data(config.dataset)
    overrides = coerce(bench.space.without(set(bench.space.names) - set(config.overrides)), config.overrides)
    space = bench.space.without(overrides)
    objective = bench.objective_factory(seed=seed, data=data)

    def full(cfg: dict) -> dict:
        return {name: ({**cfg, **overrides})[name] for name in bench.space.names}

    trace = run_loop(config.strategy, space, lambda cfg: objective(full(cfg)), config.budget, seed,
                     **config.options)
    trace.observations = [Observation(full(o.config), o.value, o.eval_index, o.failed) for o in trace.observations]
    best = trace.best_observation
    echo = config.to_dict()
    del echo["seeds"]
    echo["seed"] = seed
    return RunArtifact(echo, trace, best.config if best else None, list(trace.wall_times))


def run_experiment(config: ExperimentConfig, outdir=None) -> list[RunArtifact]:
    """Run every seed and write one artifact per seed; returns the artifacts."""
    bench = get_benchmark(config.benchmark)
    target = resolve_outdir(outdir) / config.benchmark / config.strategy
    _check_writable(target)
    try:
        data = bench.load_data(config.dataset)
    except (OSError, ValueError) as exc:
        raise HarnessError(f"cannot load dataset for {config.benchmark}: {exc}") from None
    artifacts = []
    for seed in config.seeds:
        art = run_single(config, seed, data)
        write_artifact(art, resolve_outdir(outdir))
        artifacts.append(art)
    return artifacts


def _strategy_rank(path: Path) -> tuple:
    strategy = path.parent.name
    order = STRATEGY_KINDS.index(strategy) if strategy in STRATEGY_KINDS else len(STRATEGY_KINDS)
    try:
        seed = int(path.stem.split("-", 1)[1])
    except (IndexError, ValueError):
        seed = -1
    return (order, strategy, seed)


def find_artifacts(run_dirs) -> list[Path]:
    """Artifact files under each directory (or given directly), in stable order.

    Directories keep the order they were given in; within one directory
    files are ordered by strategy (random, grid, bayes, others) then seed.
    """
    seen, out = set(), []
    for d in run_dirs:
        d = Path(d)
        if d.is_file():
            found = [d]
        elif d.is_dir():
            found = sorted((p for p in d.rglob("seed-*.json") if not p.name.endswith(".timing.json")),
                           key=_strategy_rank)
        else:
            raise HarnessError(f"no such run directory: {d}")
        for p in found:
            key = p.resolve()
            if key not in seen:
                seen.add(key)
                out.append(p)
    if not out:
        raise HarnessError("no run artifacts found in " + ", ".join(str(d) for d in run_dirs))
    return out


def load_runs(run_dirs) -> list[RunArtifact]:
    return [read_artifact(p) for p in find_artifacts(run_dirs)]
