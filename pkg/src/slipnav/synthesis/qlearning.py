"""Q-learning over the product, offline against the interval adversary or online from hops."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import NonConvergence
from .values import action_mask, resolve_intervals

GAMMA = 0.95
LEARNING_RATE = 0.1
EXPLORATION = 0.1


@dataclass
class QTable:
    q: np.ndarray  # (n_states, n_actions)
    gamma: float = GAMMA
    learning_rate: float = LEARNING_RATE
    epsilon: float = EXPLORATION
    visits: np.ndarray = None

    def __post_init__(self):
        if self.visits is None:
            self.visits = np.zeros(self.q.shape, dtype=np.int64)

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, **kw) -> "QTable":
        return cls(np.zeros((n_states, n_actions)), **kw)

    def greedy(self, state: int, allowed: np.ndarray) -> int:
        """Highest-valued allowed action, lowest index on ties; -1 if none allowed."""
        acts = np.flatnonzero(allowed)
        if not len(acts):
            return -1
        return int(acts[np.argmax(self.q[state, acts])])

    def epsilon_greedy(self, state: int, allowed: np.ndarray, rng: np.random.Generator) -> int:
        acts = np.flatnonzero(allowed)
        if not len(acts):
            return -1
        if rng.random() < self.epsilon:
            return int(acts[rng.integers(len(acts))])
        return int(acts[np.argmax(self.q[state, acts])])

    def update(self, state: int, action: int, reward: float, next_state: int,
               next_allowed: np.ndarray, terminal: bool = False) -> None:
        """One online step; the learning rate decays as 1/sqrt(visit count)."""
        self.visits[state, action] += 1
        rate = self.learning_rate / math.sqrt(self.visits[state, action])
        future = 0.0
        if not terminal and next_allowed.any():
            future = float(self.q[next_state, next_allowed].max())
        target = reward + self.gamma * future
        self.q[state, action] += rate * (target - self.q[state, action])

    def copy(self) -> "QTable":
        return QTable(self.q.copy(), self.gamma, self.learning_rate, self.epsilon, self.visits.copy())


def entry_reward(pimdp) -> np.ndarray:
    """Reward collected on entering each product state."""
    return pimdp.state_reward()


def q_learn_offline(rows, reward: np.ndarray, action_map: Optional[np.ndarray] = None,
                    gamma: float = GAMMA, pessimistic: bool = True, tol: float = 1e-6,
                    max_sweeps: int = 100_000, terminal: Optional[np.ndarray] = None) -> QTable:
    """Bellman sweeps with the next-state distribution resolved by the adversary.

    With ``pessimistic`` the adversary orders successors by ascending
    (reward + discounted value), a lower bound on the true return.  ``reward``
    is per product state and paid on entry; ``terminal`` states pay their
    entry reward but have no future.
    """
    n = rows.n_states
    mask = action_mask(rows, action_map)
    s_idx, a_idx = np.nonzero(mask)
    r = rows.row_index[s_idx, a_idx]
    succ, lower, upper = rows.succ[r], rows.lower[r], rows.upper[r]
    has_action = mask.any(1)
    stop = np.zeros(n, dtype=bool) if terminal is None else np.asarray(terminal, dtype=bool)

    q = np.zeros(mask.shape)
    values = np.zeros(n)
    for _ in range(max_sweeps):
        future = np.where(stop, 0.0, values)
        ret = np.append(reward + gamma * future, 0.0)[succ]
        probs = resolve_intervals(lower, upper, ret, pessimistic)
        q_flat = (probs * ret).sum(1)
        new_q = np.zeros(mask.shape)
        new_q[s_idx, a_idx] = q_flat
        new_values = np.where(has_action, np.where(mask, new_q, -np.inf).max(1), 0.0)
        residual = np.abs(new_values - values).max() if n else 0.0
        q, values = new_q, new_values
        if residual < tol:
            return QTable(q, gamma)
    raise NonConvergence(f"offline Q-learning residual {residual:.3g} after {max_sweeps} sweeps")


def q_learn(pimdp, reward: Optional[np.ndarray], action_map: np.ndarray, mode: str = "offline_model",
            gamma: float = GAMMA, **kw) -> QTable:
    """Offline model-based table, or an empty table to be filled by online updates."""
    if mode == "offline_model":
        return q_learn_offline(pimdp.rows, entry_reward(pimdp) if reward is None else reward,
                               action_map, gamma, **kw)
    if mode == "online_episodic":
        return QTable.zeros(pimdp.n_states, pimdp.rows.n_actions, gamma=gamma, **kw)
    raise ValueError(f"unknown Q-learning mode {mode!r}")
