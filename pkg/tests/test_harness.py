import csv
import dataclasses
import io
import json
import math
import re

import numpy as np
import pytest

from slipnav.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from slipnav.errors import ConfigError, OutputError
from slipnav.harness import (EnvironmentConfig, RunConfig, RunLog, builtin_environment, emit_outputs,
                             load_environment, load_log, load_run, product_size, render_svg,
                             run_episode, run_experiment, run_seed)
from slipnav.harness.episode import HopLog
from slipnav.harness.experiment import SweepResult, summarize
from slipnav.harness.outputs import (METRIC_FIELDS, SWEEP_FIELDS, TRAJECTORY_FIELDS, metrics_csv,
                                     sweep_csv, trajectory_csv)
from slipnav.harness.world import build_world
from slipnav.synthesis import tradeoff_bounds

SHORT = RunConfig(seed=3, batch=20, max_batches=2)


@pytest.fixture(scope="module")
def env():
    return builtin_environment("case_study")


@pytest.fixture(scope="module")
def short_log(env):
    return run_episode(env, SHORT)


def _hop(index, start, end, reward):
    return HopLog(index, start, 0, 0, "exploration", "ltl", "N1", "N1", False, 1.5, 0.0,
                  (0.0, 1.0), (0.0, 1.0), (end[0] - start[0], end[1] - start[1]), end, 1, reward)


def _synthetic_log(env, n_hops):
    log = RunLog(env.to_dict(), RunConfig().to_dict(), 7)
    pos = (7.5, 1.5)
    for k in range(n_hops):
        nxt = (pos[0], pos[1] + 1.0)
        log.hops.append(_hop(k, pos, nxt, 0.5))
        pos = nxt
    log.steps = n_hops
    log.total_reward = 0.5 * n_hops
    return log


# ---------------------------------------------------------------------------
# configuration


def test_builtin_world_layout(env):
    assert (env.nx, env.ny) == (15, 15)
    assert not env.cells("goal") & env.cells("hazard")
    assert product_size(build_world(env)) == 678


@pytest.mark.parametrize("change, message", [
    ({"goal": [[0, 0, 1, 1]], "hazard": [[1, 1, 2, 2]]}, "overlap"),
    ({"goal": [[0, 0, 20, 0]]}, "outside"),
    ({"goal": []}, "goal"),
    ({"start": [11, 12]}, "start"),
    ({"width": 14.5}, "whole number"),
    ({"hazard": [[3, 3, 2, 2]]}, "empty"),
    ({"colour": "red"}, "unknown"),
])
def test_invalid_environments_are_rejected(env, change, message):
    data = env.to_dict()
    data.update(change)
    with pytest.raises(ConfigError, match=message):
        EnvironmentConfig.from_dict(data)


@pytest.mark.parametrize("field, value", [("p_sat", 1.0), ("c", 1.0), ("batch", 0), ("runs", 0),
                                          ("reward_mode", "partial"), ("p_rl_ee", -0.1)])
def test_invalid_run_settings_are_rejected(field, value):
    with pytest.raises(ConfigError):
        RunConfig(**{field: value})


def test_environment_file_round_trip(env, tmp_path):
    path = tmp_path / "world.json"
    path.write_text(json.dumps(env.to_dict()))
    assert load_environment(path) == env
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_environment(path)
    with pytest.raises(ConfigError):
        load_run(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        builtin_environment("no_such_world")


# ---------------------------------------------------------------------------
# episodes


def test_episode_ledger_is_consistent(short_log):
    log = short_log
    assert log.steps == len(log.hops) > 0
    assert log.total_reward == pytest.approx(sum(h.reward for h in log.hops), abs=1e-9)
    assert [h.index for h in log.hops] == list(range(log.steps))
    for a, b in zip(log.hops, log.hops[1:]):
        assert a.end == b.start
        assert a.end_cell == b.start_cell
    assert log.outcome in {"satisfied", "hazard", "out_of_bounds", "step_cap", "crash"}
    assert log.satisfied == (log.outcome == "satisfied")
    assert len(log.batches) == math.ceil(log.steps / SHORT.batch) or log.outcome == "step_cap"


def test_episode_is_deterministic(env, short_log):
    again = run_episode(env, SHORT)
    assert again.to_json() == short_log.to_json()
    other = run_episode(env, dataclasses.replace(SHORT, seed=4))
    assert other.to_json() != short_log.to_json()


def test_single_run_experiment_matches_episode(env, short_log):
    logs = run_experiment(env, dataclasses.replace(SHORT, runs=1))
    assert len(logs) == 1 and logs[0].to_json() == short_log.to_json()
    assert run_seed(10, 0) == 10 and run_seed(10, 3) == 13


def test_unknown_reward_experiment_produces_distinct_runs(env):
    run = dataclasses.replace(SHORT, runs=3, reward_mode="unknown", max_batches=1)
    logs = run_experiment(env, run)
    assert [log.seed for log in logs] == [3, 4, 5]
    assert len({log.to_json() for log in logs}) == 3


def test_log_json_round_trip(short_log, tmp_path):
    path = tmp_path / "log.json"
    path.write_text(short_log.to_json())
    assert load_log(path).to_json() == short_log.to_json()
    path.write_text("[]")
    with pytest.raises(OutputError):
        load_log(path)
    with pytest.raises(OutputError):
        load_log(tmp_path / "absent.json")


# ---------------------------------------------------------------------------
# outputs


def _polyline_points(svg):
    points = re.search(r'<polyline points="([^"]*)"', svg).group(1)
    return points.split()


def test_empty_log_outputs(env):
    log = _synthetic_log(env, 0)
    rows = list(csv.reader(io.StringIO(trajectory_csv(log))))
    assert rows == [list(TRAJECTORY_FIELDS)]
    assert _polyline_points(render_svg(log)) == []


def test_three_hop_outputs(env):
    log = _synthetic_log(env, 3)
    rows = list(csv.DictReader(io.StringIO(trajectory_csv(log))))
    assert len(rows) == 3
    assert [float(r["end_y"]) for r in rows] == [2.5, 3.5, 4.5]
    points = _polyline_points(render_svg(log))
    assert len(points) == 4
    # 40 px per meter with the y axis flipped
    assert points[0] == f"{7.5 * 40:.3f},{600 - 1.5 * 40:.3f}"
    svg = render_svg(log)
    assert svg.count('class="hazard"') == len(env.cells("hazard"))
    assert svg.count('class="goal"') == len(env.cells("goal"))


def test_metrics_and_sweep_csv(env):
    logs = [_synthetic_log(env, 2), _synthetic_log(env, 3)]
    logs[1].satisfied, logs[1].outcome, logs[1].switch_step = True, "satisfied", 1
    rows = list(csv.DictReader(io.StringIO(metrics_csv(logs))))
    assert list(rows[0]) == list(METRIC_FIELDS)
    assert [r["switch_step"] for r in rows] == ["", "1"]
    result = SweepResult()
    result.cells = [summarize(0.25, 0.005, logs), summarize(0.5, 0.005, logs[:1])]
    rows = list(csv.DictReader(io.StringIO(sweep_csv(result))))
    assert list(rows[0]) == list(SWEEP_FIELDS)
    assert float(rows[0]["mean_steps"]) == 3.0  # only the satisfied run counts
    assert math.isnan(float(rows[1]["mean_reward"]))


def test_emit_outputs_writes_every_artifact(env, tmp_path):
    logs = [_synthetic_log(env, 1), _synthetic_log(env, 2)]
    written = emit_outputs(logs, tmp_path / "out")
    names = sorted(p.name for p in written)
    assert names == ["metrics.csv", "run_000.json", "run_000_trajectory.csv", "run_000_trajectory.svg",
                     "run_001.json", "run_001_trajectory.csv", "run_001_trajectory.svg"]
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OutputError):
        emit_outputs(logs, blocker / "sub")


# ---------------------------------------------------------------------------
# command line


def test_cli_bounds(capsys):
    assert main(["bounds", "--c", "0.75", "--eps", "0.0075", "--size", "678"]) == EXIT_OK
    out = capsys.readouterr().out
    expected = tradeoff_bounds(0.75, 0.0075, 678)
    assert f"M_switch {expected.m_switch:.6f}" in out
    assert f"M_LTL {expected.m_ltl:.6f}" in out
    assert main(["bounds", "--c", "0.75", "--eps", "0"]) == EXIT_CONFIG


def test_cli_configuration_errors(tmp_path, capsys):
    assert main(["run", "--env", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["run", "--psat", "1.5"]) == EXIT_CONFIG
    assert main(["run", "--env", "no_such_world"]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_cli_render_round_trip(env, tmp_path, capsys):
    log = _synthetic_log(env, 2)
    path = tmp_path / "run.json"
    path.write_text(log.to_json())
    assert main(["render", str(path)]) == EXIT_OK
    assert (tmp_path / "run.svg").read_text() == render_svg(log)
    assert main(["render", str(tmp_path / "absent.json")]) == EXIT_RUNTIME


def test_cli_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--seed", "3", "--batch", "20", "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "run_000.json").is_file() and (out / "metrics.csv").is_file()
    log = load_log(out / "run_000.json")
    assert log.seed == 3 and log.run["batch"] == 20
