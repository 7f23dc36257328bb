"""Experiment plumbing: benchmark registry, run artifacts, reports and the CLI."""

from .registry import BENCHMARK_NAMES, Benchmark, get_benchmark, registry_lookup
from .report import ComparisonReport, compare, export_traces, read_traces
from .runner import ConfigError, ExperimentConfig, HarnessError, RunArtifact, run_experiment

__all__ = [
    "BENCHMARK_NAMES", "Benchmark", "get_benchmark", "registry_lookup",
    "ComparisonReport", "compare", "export_traces", "read_traces",
    "ConfigError", "ExperimentConfig", "HarnessError", "RunArtifact", "run_experiment",
]
