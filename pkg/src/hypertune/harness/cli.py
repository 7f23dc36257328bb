"""Command line entry point.

Exit codes: 0 success, 1 usage error (bad arguments or config), 2 runtime fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .registry import BENCHMARK_NAMES, REGISTRY, UnknownBenchmark, get_benchmark
from .report import DEFAULT_BASELINE, compare, export_traces
from .runner import ConfigError, ExperimentConfig, HarnessError, resolve_outdir, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_FAULT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; route them to exit 1 instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hypertune", description="Hyperparameter search experiments on tunable benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment described by a JSON config")
    run.add_argument("config", help="experiment config JSON file")
    run.add_argument("--out", help="output directory (default: $HYPERTUNE_OUT or ./runs)")

    cmp_ = sub.add_parser("compare", help="summarize and test runs of one benchmark")
    cmp_.add_argument("dirs", nargs="+", help="run directories or artifact files")
    cmp_.add_argument("--baseline", default=DEFAULT_BASELINE,
                      help="strategy to measure improvement against, or 'default' for the untuned default config")
    cmp_.add_argument("--alpha", type=float, default=0.05, help="significance level for marking p-values")
    cmp_.add_argument("--json", dest="json_path", help="also write the report as JSON to this path")

    exp = sub.add_parser("export", help="export best-seen traces to CSV")
    exp.add_argument("dirs", nargs="+", help="run directories or artifact files")
    exp.add_argument("--csv", required=True, help="output CSV path")

    sub.add_parser("list-benchmarks", help="list benchmark names")

    gen = sub.add_parser("gen-data", help="write a synthetic dataset in the benchmark's file format")
    gen.add_argument("benchmark")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output file path")
    return p


def _cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    outdir = resolve_outdir(args.out)
    arts = run_experiment(config, outdir)
    for art in arts:
        best = art.trace.best_seen[-1]
        print(f"{config.benchmark}/{config.strategy} seed {art.seed}: best {best:.6g} after {len(art.trace)} evals")
    print(f"wrote {len(arts)} artifact(s) under {outdir / config.benchmark / config.strategy}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    report = compare(args.dirs, alpha_level=args.alpha, baseline=args.baseline)
    sys.stdout.write(report.render())
    if args.json_path:
        Path(args.json_path).write_text(json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return EXIT_OK


def _cmd_export(args) -> int:
    rows = export_traces(args.dirs, args.csv)
    print(f"wrote {rows} rows to {args.csv}")
    return EXIT_OK


def _cmd_list(_args) -> int:
    for name in BENCHMARK_NAMES:
        b = REGISTRY[name]
        print(f"{name:<18} {len(b.space)} params  {b.description}")
    return EXIT_OK


def _cmd_gen(args) -> int:
    try:
        bench = get_benchmark(args.benchmark)
    except UnknownBenchmark as exc:
        raise UsageError(str(exc)) from None
    if not bench.has_dataset:
        raise UsageError(f"{bench.name} has no dataset to generate")
    data = bench.make_data(seed=args.seed)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    bench.write_data(data, out)
    print(f"wrote {bench.name} dataset (seed {args.seed}) to {out}")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "compare": _cmd_compare,
    "export": _cmd_export,
    "list-benchmarks": _cmd_list,
    "gen-data": _cmd_gen,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("hypertune: a command is required (run, compare, export, list-benchmarks, gen-data)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HarnessError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT


def main() -> None:
    sys.exit(cli_main())
