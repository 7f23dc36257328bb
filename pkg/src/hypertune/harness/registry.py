"""Named benchmarks: search space, objective, defaults and dataset I/O."""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from typing import Any, Callable

from ..bench import als, features, sgd, text
from ..space import ParamSpace


class UnknownBenchmark(KeyError):
    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class Benchmark:
    name: str
    space: ParamSpace
    default_config: dict
    # evaluate(data, config, seed) -> float, higher is better
    evaluate: Callable[[Any, dict, int], float]
    make_data: Callable[..., Any] | None = None
    read_data: Callable[[str], Any] | None = None
    write_data: Callable[[Any, str], None] | None = None
    data_suffix: str = ".csv"
    description: str = ""

    @property
    def has_dataset(self) -> bool:
        return self.make_data is not None

    def data_params(self) -> list[str]:
        if self.make_data is None:
            return []
        return list(inspect.signature(self.make_data).parameters)

    def load_data(self, dataset: dict | None):
        """Materialize the dataset described by ``dataset``.

        ``{"path": file}`` reads the benchmark's file format; any other dict
        is passed as keyword arguments to the synthetic generator.
        """
        dataset = dict(dataset or {})
        if self.make_data is None:
            if dataset:
                raise ValueError(f"{self.name} takes no dataset")
            return None
        if "path" in dataset:
            if len(dataset) != 1:
                raise ValueError("dataset with 'path' must have no other keys")
            return self.read_data(dataset["path"])
        unknown = sorted(set(dataset) - set(self.data_params()))
        if unknown:
            raise ValueError(f"unknown dataset parameters for {self.name}: {unknown}; "
                             f"valid: {self.data_params()}")
        return self.make_data(**dataset)

    def objective_factory(self, dataset: dict | None = None, seed: int = 0, data=None) -> Callable[[dict], float]:
        if data is None:
            data = self.load_data(dataset)

        def objective(config: dict) -> float:
            return self.evaluate(data, config, seed)

        return objective


def _testfn(fn: sgd.TestFunction):
    # minimization problems; the tuner maximizes
    def evaluate(_data, config, _seed):
        return -fn.value((float(config["x"]), float(config["y"])))
    return evaluate


def _text_eval(corpus, config, seed):
    return text.cv_objective(corpus, config, seed=seed)


_BENCHMARKS = (
    Benchmark("text", text.SPACE, text.DEFAULT_CONFIG, _text_eval, text.make_synthetic_corpus,
              text.read_corpus, text.write_corpus, ".tsv",
              "n-gram logistic regression, Monte Carlo CV accuracy"),
    Benchmark("features", features.SPACE, features.DEFAULT_CONFIG, features.features_objective,
              features.make_synthetic_images, features.read_images, features.write_images, ".csv",
              "ZCA + k-means features into gradient boosting, held-out accuracy"),
    Benchmark("sgd", sgd.SPACE, sgd.DEFAULT_CONFIG, sgd.sgd_objective, sgd.make_moons,
              sgd.read_points, sgd.write_points, ".csv",
              "one epoch of RMSProp on a tanh MLP, validation accuracy"),
    Benchmark("als", als.SPACE, als.DEFAULT_CONFIG, als.recsys_objective, als.make_synthetic_ratings,
              als.read_ratings, als.write_ratings, ".csv",
              "ALS matrix factorization, negative validation RMSE"),
    Benchmark("testfn-bowl", sgd.TESTFN_SPACES["bowl"], {"x": 0.0, "y": 0.0}, _testfn(sgd.bowl()),
              description="negated quadratic bowl"),
    Benchmark("testfn-rosenbrock", sgd.TESTFN_SPACES["rosenbrock"], {"x": 0.0, "y": 0.0},
              _testfn(sgd.rosenbrock()), description="negated Rosenbrock function"),
)

REGISTRY = {b.name: b for b in _BENCHMARKS}
BENCHMARK_NAMES = tuple(REGISTRY)


def get_benchmark(name: str) -> Benchmark:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownBenchmark(f"unknown benchmark {name!r}; valid: {', '.join(BENCHMARK_NAMES)}") from None


def registry_lookup(name: str) -> tuple[ParamSpace, Callable[..., Callable[[dict], float]]]:
    bench = get_benchmark(name)
    return bench.space, bench.objective_factory
