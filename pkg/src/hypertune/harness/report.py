"""Cross-strategy comparison reports and CSV trace export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .. import evalstat
from .registry import get_benchmark
from .runner import HarnessError, RunArtifact, load_runs

DEFAULT_BASELINE = "default"
TRACE_COLUMNS = ("benchmark", "strategy", "seed", "eval_index", "value", "best_seen")


@dataclass
class ComparisonReport:
    benchmark: str
    budget: int
    baseline: str
    alpha_level: float
    strategies: list  # report order
    summary: dict  # strategy -> {n, mean, median, sd}
    improvement: dict  # strategy -> percent vs baseline mean (None if undefined)
    p_values: dict  # "a|b" -> UTestResult
    iqr: dict = field(default_factory=dict)  # strategy -> {q25, median, q75}

    def p_value(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        key = f"{a}|{b}" if f"{a}|{b}" in self.p_values else f"{b}|{a}"
        return self.p_values[key].p_two_sided

    def to_json(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "budget": self.budget,
            "baseline": self.baseline,
            "alpha_level": self.alpha_level,
            "strategies": list(self.strategies),
            "summary": self.summary,
            "relative_improvement_pct": self.improvement,
            "pairwise": [
                {"a": k.split("|")[0], "b": k.split("|")[1], "u": r.u_statistic, "p": r.p_two_sided,
                 "method": r.method, "significant": r.p_two_sided < self.alpha_level}
                for k, r in self.p_values.items()
            ],
            "iqr_trace": self.iqr,
        }

    def render(self) -> str:
        names = self.strategies
        width = max(8, *(len(n) for n in names))
        lines = [f"benchmark: {self.benchmark}   budget: {self.budget}   baseline: {self.baseline}", ""]
        head = f"{'strategy':<{width}}  {'runs':>4}  {'mean':>10}  {'median':>10}  {'sd':>10}  {'vs base':>9}"
        lines += [head, "-" * len(head)]
        for n in names:
            s = self.summary[n]
            imp = self.improvement.get(n)
            imp_txt = "n/a" if imp is None else f"{imp:+.2f}%"
            lines.append(f"{n:<{width}}  {s['n']:>4}  {s['mean']:>10.4f}  {s['median']:>10.4f}  "
                         f"{s['sd']:>10.4f}  {imp_txt:>9}")
        if len(names) > 1:
            lines += ["", f"Mann-Whitney U two-sided p (* p < {self.alpha_level:g})"]
            lines.append(" " * width + "  " + "  ".join(f"{n:>{width}}" for n in names))
            for a in names:
                cells = []
                for b in names:
                    p = self.p_value(a, b)
                    cells.append(f"{p:.4f}{'*' if p < self.alpha_level else ' '}".rjust(width))
                lines.append(f"{a:<{width}}  " + "  ".join(cells))
        return "\n".join(lines) + "\n"


def _group(artifacts: list[RunArtifact]) -> dict:
    groups: dict = {}
    for art in artifacts:
        groups.setdefault(art.strategy, []).append(art)
    return groups


def _check_consistent(artifacts: list[RunArtifact]) -> tuple[str, int]:
    benches = sorted({a.benchmark for a in artifacts})
    if len(benches) > 1:
        raise HarnessError(f"runs mix benchmarks: {', '.join(benches)}")
    budgets = {}
    for a in artifacts:
        if len(a.trace) != a.budget:
            raise HarnessError(f"{a.strategy} seed {a.seed}: trace has {len(a.trace)} evaluations, "
                               f"budget {a.budget}")
        budgets.setdefault(a.budget, set()).add(a.strategy)
    if len(budgets) > 1:
        desc = "; ".join(f"{b}: {', '.join(sorted(s))}" for b, s in sorted(budgets.items()))
        raise HarnessError(f"mismatched budgets across runs ({desc})")
    for strategy, runs in _group(artifacts).items():
        seeds = [r.seed for r in runs]
        if len(set(seeds)) != len(seeds):
            raise HarnessError(f"duplicate seeds for strategy {strategy}")
    return benches[0], next(iter(budgets))


def default_baseline_values(artifacts: list[RunArtifact]) -> list[float]:
    """Score the benchmark's untuned default configuration once per run seed.

    Overrides stored with the runs are applied on top of the default. Seeds
    and datasets are taken from the artifacts, so each value is what the
    default would have scored inside that run.
    """
    bench = get_benchmark(artifacts[0].benchmark)
    values, cache = {}, {}
    for art in artifacts:
        ds_key = repr(sorted(art.config.get("dataset", {}).items()))
        ov = art.config.get("overrides", {})
        key = (ds_key, repr(sorted(ov.items())), art.seed)
        if key in values:
            continue
        if ds_key not in cache:
            try:
                cache[ds_key] = bench.load_data(art.config.get("dataset", {}))
            except (OSError, ValueError) as exc:
                raise HarnessError(f"cannot load dataset to score the default baseline: {exc}") from None
        objective = bench.objective_factory(seed=art.seed, data=cache[ds_key])
        values[key] = float(objective({**bench.default_config, **ov}))
    return list(values.values())


def compare(run_dirs, alpha_level: float = 0.05, baseline: str = DEFAULT_BASELINE) -> ComparisonReport:
    """Summarize and test every strategy found under ``run_dirs``.

    ``baseline`` names a strategy in the runs, or ``"default"`` for the
    benchmark's untuned default configuration, which is then scored once
    per seed and reported as an extra row.
    """
    artifacts = load_runs(run_dirs)
    benchmark, budget = _check_consistent(artifacts)
    groups = _group(artifacts)
    finals = {s: [evalstat.final_best(a.trace) for a in runs] for s, runs in groups.items()}

    if baseline == DEFAULT_BASELINE and DEFAULT_BASELINE not in groups:
        finals[DEFAULT_BASELINE] = default_baseline_values(artifacts)
    elif baseline not in groups:
        raise HarnessError(f"baseline {baseline!r} is not among the strategies: {', '.join(groups)}")
    names = list(finals)

    summary = evalstat.best_found_summary({s: [[v] for v in vals] for s, vals in finals.items()})
    base_mean = summary[baseline]["mean"]
    improvement = {}
    for s in names:
        if s == baseline:
            improvement[s] = 0.0
        elif base_mean == 0 or not math.isfinite(base_mean) or not math.isfinite(summary[s]["mean"]):
            improvement[s] = None
        else:
            improvement[s] = evalstat.relative_improvement(summary[s]["mean"], base_mean)

    p_values = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            if len(finals[a]) >= 2 and len(finals[b]) >= 2:
                p_values[f"{a}|{b}"] = evalstat.mann_whitney_u(finals[a], finals[b])

    iqr = {s: evalstat.iqr_trace([a.trace for a in runs]) for s, runs in groups.items()}
    return ComparisonReport(benchmark, budget, baseline, alpha_level, names, summary, improvement, p_values, iqr)


def _fmt(x: float) -> str:
    return repr(float(x))


def export_traces(run_dirs, path) -> int:
    """Write one CSV row per evaluation; returns the number of rows."""
    artifacts = load_runs(run_dirs)
    order = {s: i for i, s in enumerate(_group(artifacts))}
    artifacts = sorted(artifacts, key=lambda a: (order[a.strategy], a.seed))
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for art in artifacts:
            for obs, best in zip(art.trace.observations, art.trace.best_seen):
                writer.writerow([art.benchmark, art.strategy, art.seed, obs.eval_index,
                                 "" if obs.failed else _fmt(obs.value), _fmt(best)])
                rows += 1
    return rows


def read_traces(path) -> list[dict]:
    """Parse an exported trace CSV back into typed rows."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            out.append({
                "benchmark": r["benchmark"],
                "strategy": r["strategy"],
                "seed": int(r["seed"]),
                "eval_index": int(r["eval_index"]),
                "value": float(r["value"]) if r["value"] else np.nan,
                "best_seen": float(r["best_seen"]),
            })
    return out
