"""Repeated episodes: reward-carrying experiments and the switching-parameter sweep."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import EnvironmentConfig, RunConfig
from .episode import RunLog, new_qtable, run_episode

SWEEP_P = (0.25, 0.5, 0.75)
SWEEP_EPS = (0.0025, 0.005, 0.0075)


def run_seed(master: int, index: int) -> int:
    """Seed of the ``index``-th episode of an experiment; the first episode uses ``master`` itself."""
    return master + index


def run_experiment(env: EnvironmentConfig, run: RunConfig) -> list:
    """``run.runs`` sequential episodes with per-run seeds.

    In unknown-reward mode one Q-table is shared by all episodes so reward
    knowledge carries over, while every episode restarts from the GP prior.
    """
    qtable = new_qtable(env) if run.reward_mode == "unknown" else None
    return [run_episode(env, run, qtable=qtable, seed=run_seed(run.seed, i)) for i in range(run.runs)]


@dataclass(frozen=True)
class SweepCell:
    p: float
    eps: float
    mean_reward: float
    mean_steps: float
    satisfied: int
    runs: int


@dataclass
class SweepResult:
    cells: list = field(default_factory=list)
    logs: dict = field(default_factory=dict)  # (p, eps) -> list of RunLog

    def cell(self, p: float, eps: float) -> SweepCell:
        for c in self.cells:
            if c.p == p and c.eps == eps:
                return c
        raise KeyError((p, eps))

    def table(self, attribute: str, ps: Sequence[float] = SWEEP_P, epss: Sequence[float] = SWEEP_EPS):
        """Rows indexed by P, columns by epsilon."""
        return np.array([[getattr(self.cell(p, e), attribute) for e in epss] for p in ps])


def summarize(p: float, eps: float, logs: Sequence[RunLog]) -> SweepCell:
    """Means over the satisfied episodes (NaN when none satisfied)."""
    done = [log for log in logs if log.satisfied]
    if done:
        reward = float(np.mean([log.total_reward for log in done]))
        steps = float(np.mean([log.steps for log in done]))
    else:
        reward = steps = float("nan")
    return SweepCell(p, eps, reward, steps, len(done), len(logs))


def sweep_switching(env: EnvironmentConfig, run: RunConfig, runs: Optional[int] = None,
                    ps: Sequence[float] = SWEEP_P, epss: Sequence[float] = SWEEP_EPS) -> SweepResult:
    """Grid over P (used for both the exploration RL share and C) and the decay rate.

    Every cell replays the same episode seeds, so cells differ only in the
    switching parameters.
    """
    runs = run.runs if runs is None else runs
    result = SweepResult()
    for p in ps:
        for eps in epss:
            cell_run = dataclasses.replace(run, p_rl_ee=p, c=p, eps=eps, runs=runs)
            logs = run_experiment(env, cell_run)
            result.logs[(p, eps)] = logs
            result.cells.append(summarize(p, eps, logs))
    return result
