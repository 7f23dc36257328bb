import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from hypertune.evalstat import mann_whitney_u
from hypertune.harness import (
    BENCHMARK_NAMES,
    ConfigError,
    ExperimentConfig,
    HarnessError,
    RunArtifact,
    compare,
    export_traces,
    read_traces,
    registry_lookup,
    run_experiment,
)
from hypertune.harness.cli import cli_main
from hypertune.harness import runner
from hypertune.harness.runner import artifact_path, read_artifact, write_artifact
from hypertune.space import is_valid
from hypertune.strategies import Trace


def bowl_config(**kw):
    base = {"benchmark": "testfn-bowl", "strategy": "random", "budget": 6, "seeds": [0, 1]}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def hand_artifact(strategy, seed, values, budget=None, benchmark="testfn-bowl"):
    t = Trace(strategy, seed)
    for i, v in enumerate(values):
        t.record({"x": 0.1 * i, "y": 0.0}, v, 0.0)
    cfg = {"benchmark": benchmark, "strategy": strategy, "budget": budget or len(values), "seed": seed,
           "dataset": {}, "overrides": {}}
    best = t.best_observation
    return RunArtifact(cfg, t, best.config if best else None, [0.0] * len(values))


def test_registry_lookup():
    space, factory = registry_lookup("als")
    assert space.names == ["log_lambda", "k", "T"]
    assert len(registry_lookup("text")[0]) == 6
    with pytest.raises(KeyError, match="testfn-bowl"):
        registry_lookup("nope")
    f = factory(dataset={"m": 20, "n": 15, "density": 0.5}, seed=0)
    assert math.isfinite(f({"log_lambda": -1.0, "k": 2, "T": 5}))
    bowl_space, bowl_factory = registry_lookup("testfn-bowl")
    assert bowl_factory()({"x": 0.0, "y": 0.0}) <= 0.0
    assert len(BENCHMARK_NAMES) == 6


def test_config_validation():
    with pytest.raises(ConfigError):
        bowl_config(budget=0)
    with pytest.raises(ConfigError):
        bowl_config(seeds=[1, 1])
    with pytest.raises(ConfigError):
        bowl_config(seeds=[])
    with pytest.raises(ConfigError):
        bowl_config(strategy="annealing")
    with pytest.raises(ConfigError):
        bowl_config(overrides={"z": 1.0})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"benchmark": "testfn-bowl", "strategy": "random", "budget": 3, "seeds": [0],
                                    "colour": "red"})


def test_two_seeds_two_files_and_byte_identical_rerun(tmp_path):
    cfg = bowl_config(strategy="bayes", budget=8)
    arts = run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    files = sorted((tmp_path / "a" / "testfn-bowl" / "bayes").glob("seed-?.json"))
    assert [f.name for f in files] == ["seed-0.json", "seed-1.json"]
    for f in files:
        other = tmp_path / "b" / "testfn-bowl" / "bayes" / f.name
        assert f.read_bytes() == other.read_bytes()
    # rerunning into the same directory overwrites in place
    before = files[0].read_bytes()
    run_experiment(cfg, tmp_path / "a")
    assert files[0].read_bytes() == before
    space, factory = registry_lookup("testfn-bowl")
    for f, art in zip(files, arts):
        back = read_artifact(f)
        assert is_valid(space, back.best_config)
        assert factory(seed=back.seed)(back.best_config) == back.trace.best_seen[-1]
        assert len(back.timing) == 8 and back.best_seen == art.best_seen


def test_unwritable_outdir_faults_before_evaluating(tmp_path, monkeypatch):
    # a regular file in the path blocks directory creation even for root
    blocker = tmp_path / "file"
    blocker.write_text("x")
    calls = []
    monkeypatch.setattr(runner, "run_single", lambda *a, **k: calls.append(1))
    with pytest.raises(HarnessError, match="not writable"):
        run_experiment(bowl_config(), blocker / "out")
    assert calls == []


def test_overrides_are_fixed(tmp_path):
    cfg = bowl_config(overrides={"y": 0.25}, budget=5)
    arts = run_experiment(cfg, tmp_path)
    for art in arts:
        assert all(o.config["y"] == 0.25 for o in art.trace.observations)
        assert list(art.best_config) == ["x", "y"]


def test_artifact_json_handles_failures(tmp_path):
    art = hand_artifact("random", 0, [None, 2.0, None])
    path = write_artifact(art, tmp_path)
    obj = json.loads(path.read_text())
    assert obj["evaluations"][0]["best_seen"] is None
    assert obj["evaluations"][2]["value"] is None and obj["evaluations"][2]["failed"]
    back = read_artifact(path)
    assert back.trace.best_seen == [-math.inf, 2.0, 2.0]
    assert path == artifact_path(tmp_path, "testfn-bowl", "random", 0)


def test_compare_self_and_hand_built_p(tmp_path):
    lo = [[0.1, 0.2], [0.0, 0.3], [0.15, 0.25]]
    hi = [[0.5, 0.6], [0.7, 0.4], [0.55, 0.8]]
    for s, vals in enumerate(lo):
        write_artifact(hand_artifact("random", s, vals), tmp_path)
    for s, vals in enumerate(hi):
        write_artifact(hand_artifact("bayes", s, vals), tmp_path)
    report = compare([tmp_path], baseline="random")
    assert report.strategies == ["random", "bayes"]
    assert report.improvement["random"] == 0.0
    assert report.p_value("random", "random") == 1.0
    # disjoint ranges with three runs each: two extreme labellings out of twenty
    assert report.p_value("random", "bayes") == pytest.approx(0.1, abs=1e-12)
    expected = mann_whitney_u([0.2, 0.3, 0.25], [0.6, 0.7, 0.8]).p_two_sided
    assert report.p_value("bayes", "random") == expected
    mean_lo, mean_hi = np.mean([0.2, 0.3, 0.25]), np.mean([0.6, 0.7, 0.8])
    assert report.improvement["bayes"] == pytest.approx(100 * (mean_hi - mean_lo) / mean_lo)
    text = report.render()
    assert "random" in text and "bayes" in text and "0.1000*" not in text
    assert json.loads(json.dumps(report.to_json()))["strategies"] == ["random", "bayes"]


def test_compare_default_baseline_and_order(tmp_path):
    for strategy in ("bayes", "random"):
        run_experiment(bowl_config(strategy=strategy, budget=5), tmp_path)
    report = compare([tmp_path / "testfn-bowl" / "bayes", tmp_path / "testfn-bowl" / "random"])
    assert report.strategies == ["bayes", "random", "default"]
    assert report.improvement["default"] == 0.0
    _, factory = registry_lookup("testfn-bowl")
    default_value = factory()({"x": 0.0, "y": 0.0})
    assert report.summary["default"] == {"n": 2, "mean": default_value, "median": default_value, "sd": 0.0}


def test_compare_faults(tmp_path):
    write_artifact(hand_artifact("random", 0, [1.0, 2.0]), tmp_path)
    write_artifact(hand_artifact("random", 1, [1.0, 2.0]), tmp_path)
    write_artifact(hand_artifact("bayes", 0, [1.0, 2.0, 3.0]), tmp_path)
    with pytest.raises(HarnessError, match="mismatched budgets"):
        compare([tmp_path])
    with pytest.raises(HarnessError):
        compare([tmp_path / "missing"])
    with pytest.raises(HarnessError, match="baseline"):
        compare([tmp_path / "testfn-bowl" / "random"], baseline="grid")


def test_export_traces_roundtrip(tmp_path):
    run_experiment(bowl_config(budget=7), tmp_path)
    run_experiment(bowl_config(strategy="grid", budget=7, seeds=[3]), tmp_path)
    csv_path = tmp_path / "traces.csv"
    assert export_traces([tmp_path], csv_path) == 7 * 3
    rows = read_traces(csv_path)
    assert len(rows) == 21
    keys = [(r["strategy"], r["seed"], r["eval_index"]) for r in rows]
    assert keys == [("random", 0, i) for i in range(7)] + [("random", 1, i) for i in range(7)] + \
        [("grid", 3, i) for i in range(7)]
    for start in (0, 7, 14):
        group = [r["best_seen"] for r in rows[start:start + 7]]
        assert all(b >= a for a, b in zip(group, group[1:]))
        assert group[-1] == max(r["value"] for r in rows[start:start + 7])
    art = read_artifact(tmp_path / "testfn-bowl" / "random" / "seed-1.json")
    assert [r["value"] for r in rows[7:14]] == [o.value for o in art.trace.observations]


def test_cli_list_benchmarks(capsys):
    assert cli_main(["list-benchmarks"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert [line.split()[0] for line in out] == list(BENCHMARK_NAMES)


def test_cli_usage_errors(tmp_path, capsys):
    assert cli_main(["run", str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err
    assert cli_main([]) == 1
    assert cli_main(["frobnicate"]) == 1
    assert cli_main(["export", str(tmp_path)]) == 1  # --csv is required
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli_main(["run", str(bad)]) == 1
    assert cli_main(["gen-data", "testfn-bowl", "--out", str(tmp_path / "x")]) == 1
    assert cli_main(["gen-data", "nope", "--out", str(tmp_path / "x")]) == 1


def test_cli_runtime_fault(tmp_path, capsys):
    assert cli_main(["compare", str(tmp_path / "nothing")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"benchmark": "als", "strategy": "random", "budget": 2, "seeds": [0],
                               "dataset": {"path": str(tmp_path / "absent.csv")}}))
    assert cli_main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("name", ["text", "features", "sgd", "als"])
def test_cli_gen_data_then_run_from_file(name, tmp_path):
    path = tmp_path / f"data-{name}"
    assert cli_main(["gen-data", name, "--seed", "2", "--out", str(path)]) == 0
    space, factory = registry_lookup(name)
    from hypertune.harness import get_benchmark
    bench = get_benchmark(name)
    direct = bench.make_data(seed=2)
    loaded = bench.load_data({"path": str(path)})
    assert type(loaded) is type(direct)
    if name in ("sgd", "als"):
        f_file = factory(dataset={"path": str(path)}, seed=0)
        f_gen = factory(dataset={"seed": 2}, seed=0)
        assert f_file(bench.default_config) == f_gen(bench.default_config)


def test_cli_run_compare_export_end_to_end(tmp_path, monkeypatch):
    monkeypatch.setenv("HYPERTUNE_OUT", str(tmp_path / "env-out"))
    t0 = time.perf_counter()
    for strategy in ("random", "grid", "bayes"):
        cfg = tmp_path / f"{strategy}.json"
        cfg.write_text(json.dumps({"benchmark": "testfn-bowl", "strategy": strategy, "budget": 10,
                                   "seeds": [0, 1, 2]}))
        assert cli_main(["run", str(cfg)]) == 0
    root = tmp_path / "env-out" / "testfn-bowl"
    assert cli_main(["compare", str(root), "--json", str(tmp_path / "r.json")]) == 0
    assert time.perf_counter() - t0 < 10
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["strategies"] == ["random", "grid", "bayes", "default"]
    assert cli_main(["export", str(root), "--csv", str(tmp_path / "t.csv")]) == 0
    assert len(read_traces(tmp_path / "t.csv")) == 90


def test_module_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "hypertune", "list-benchmarks"], capture_output=True, text=True)
    assert ok.returncode == 0 and len(ok.stdout.strip().splitlines()) == 6
    bad = subprocess.run([sys.executable, "-m", "hypertune", "run", str(tmp_path / "nope.json")],
                         capture_output=True, text=True)
    assert bad.returncode == 1 and bad.stderr.startswith("error:")
