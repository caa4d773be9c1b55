"""Switching between the temporal-logic action and the reward-learning action."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from ..errors import NoEligibleAction
from .qlearning import QTable

EXPLORATION = "exploration"
GOAL_REACHING = "goal-reaching"
LTL = "ltl"
RL = "rl"


@dataclass
class LtlStrategy:
    """Per-state LTL action: a fixed reach action, or a uniform pick inside an end component."""

    reach_action: np.ndarray  # per state, -1 if undefined
    component_actions: Mapping = field(default_factory=dict)  # state -> tuple of actions

    def action(self, state: int, rng: np.random.Generator) -> int:
        acts = self.component_actions.get(state)
        if acts:
            return int(acts[rng.integers(len(acts))])
        return int(self.reach_action[state])


@dataclass
class SwitchingPolicy:
    mode: str
    ltl: LtlStrategy
    allowed: np.ndarray  # (n_states, n_actions) restricted action map
    qtable: QTable
    p_rl_explore: float = 0.0
    c: float = 0.0
    eps: float = 0.0
    m: int = 0
    online: bool = False
    seed: int = 0
    branch_rng: Optional[np.random.Generator] = field(default=None, repr=False)
    action_rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def __post_init__(self):
        # callers that re-synthesize mid-episode pass their own generators
        branch_seed, action_seed = np.random.SeedSequence(self.seed).spawn(2)
        if self.branch_rng is None:
            self.branch_rng = np.random.default_rng(branch_seed)
        if self.action_rng is None:
            self.action_rng = np.random.default_rng(action_seed)

    def p_rl(self) -> float:
        if self.mode == EXPLORATION:
            return self.p_rl_explore
        return self.c * math.exp(-self.eps * self.m)

    def select(self, state: int) -> tuple[int, str]:
        """Return (action index, branch) for the current product state."""
        allowed = self.allowed[state]
        if not allowed.any():
            raise NoEligibleAction(f"no eligible action at product state {state}")
        use_rl = self.branch_rng.random() < self.p_rl()
        if self.mode == GOAL_REACHING:
            self.m += 1
        branches = (RL, LTL) if use_rl else (LTL, RL)
        for branch in branches:
            act = self._draw(branch, state, allowed)
            if act >= 0 and allowed[act]:
                return act, branch
        raise NoEligibleAction(f"neither branch yields an eligible action at state {state}")

    def _draw(self, branch: str, state: int, allowed: np.ndarray) -> int:
        if branch == RL:
            if self.online:
                return self.qtable.epsilon_greedy(state, allowed, self.action_rng)
            return self.qtable.greedy(state, allowed)
        return self.ltl.action(state, self.action_rng)


def exploration_policy(ltl: LtlStrategy, allowed: np.ndarray, qtable: QTable, p_rl_ee: float,
                       seed: int = 0, online: bool = False, **rngs) -> SwitchingPolicy:
    if not 0.0 <= p_rl_ee <= 1.0:
        raise ValueError("P_RL,ee must lie in [0, 1]")
    return SwitchingPolicy(EXPLORATION, ltl, allowed, qtable, p_rl_explore=p_rl_ee,
                           online=online, seed=seed, **rngs)


def goal_reaching_policy(ltl: LtlStrategy, allowed: np.ndarray, qtable: QTable, c: float, eps: float,
                         seed: int = 0, online: bool = False, m: int = 0, **rngs) -> SwitchingPolicy:
    if not 0.0 <= c < 1.0:
        raise ValueError("C must lie in [0, 1)")
    if not 0.0 <= eps <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    return SwitchingPolicy(GOAL_REACHING, ltl, allowed, qtable, c=c, eps=eps, m=m, online=online,
                           seed=seed, **rngs)
