"""Interval value iteration for maximal reachability under an adversary."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix, identity
from scipy.sparse.linalg import spsolve

from ..abstraction import IntervalRows
from ..errors import NonConvergence

TOLERANCE = 1e-6
MAX_SWEEPS = 100_000


def resolve_intervals(lower: np.ndarray, upper: np.ndarray, key: np.ndarray, pessimistic: bool):
    """Adversarial distribution per row.

    Successors are visited in ascending ``key`` order when ``pessimistic``
    (descending otherwise); each receives its lower bound plus as much of
    the remaining slack as its upper bound allows.  Ties keep column order.
    """
    order = np.argsort(key if pessimistic else -key, axis=1, kind="stable")
    lo = np.take_along_axis(lower, order, axis=1)
    slack = np.take_along_axis(upper, order, axis=1) - lo
    remaining = 1.0 - lower.sum(1, keepdims=True)
    before = np.cumsum(slack, axis=1) - slack
    extra = np.clip(remaining - before, 0.0, slack)
    probs = np.empty_like(lower)
    np.put_along_axis(probs, order, lo + extra, axis=1)
    return probs


def action_mask(rows: IntervalRows, action_map: Optional[np.ndarray] = None) -> np.ndarray:
    avail = rows.row_index >= 0
    return avail if action_map is None else (avail & action_map)


@dataclass(frozen=True)
class ValueBounds:
    values: np.ndarray  # per state
    action: np.ndarray  # per state, -1 where no action is available
    q_values: np.ndarray  # (n_states, n_actions), -inf where unavailable
    sweeps: int


def interval_value_iteration(rows: IntervalRows, target, mode: str = "worst",
                             action_map: Optional[np.ndarray] = None, tol: float = TOLERANCE,
                             max_sweeps: int = MAX_SWEEPS, accelerate: bool = True) -> ValueBounds:
    """Max-probability of reaching ``target`` with the adversary set by ``mode``.

    ``target`` is a boolean mask or an iterable of state indices.  Sweeps are
    Jacobi style: every state reads the previous sweep's values, and the run
    stops once a sweep changes no value by ``tol`` or more.

    With ``accelerate``, every ``ACCEL_EVERY`` sweeps the iterate is raised by
    strategy iteration to the exact value of an improved policy against a
    best-responding adversary.  Such a value is achievable, so it stays a lower
    bound and a sub-solution of the Bellman operator; iteration from it
    converges monotonically to the same least fixed point while skipping the
    long tail caused by cycles with tiny escape probability.
    """
    if mode not in ("worst", "best"):
        raise ValueError("mode must be 'worst' or 'best'")
    n = rows.n_states
    tgt = _as_mask(target, n)
    mask = action_mask(rows, action_map)
    pessimistic = mode == "worst"
    s_idx, a_idx = np.nonzero(mask)
    r_idx = rows.row_index[s_idx, a_idx]
    system = _System(n, rows.n_actions, tgt, s_idx, a_idx, rows.succ[r_idx], rows.lower[r_idx], rows.upper[r_idx],
                     pessimistic)

    values = tgt.astype(float)
    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        new, _ = system.bellman(values)
        residual = np.abs(new - values).max() if n else 0.0
        values = new
        if residual < tol:
            break
        if accelerate and sweep % ACCEL_EVERY == 0:
            values = system.strategy_iteration(values)
    else:
        raise NonConvergence(f"value iteration residual {residual:.3g} after {max_sweeps} sweeps")
    if accelerate:
        # replace the tolerance-level iterate by exact policy values
        values = system.strategy_iteration(values)

    _, q_flat = system.bellman(values)
    q_values = np.full(mask.shape, -np.inf)
    q_values[s_idx, a_idx] = q_flat
    return ValueBounds(values, system.ranked_actions(values, q_values), q_values, sweep)


ACCEL_EVERY = 100


class _System:
    """Flattened (state, action) rows with the Bellman operator and policy evaluation."""

    def __init__(self, n, n_actions, tgt, s_idx, a_idx, succ, lower, upper, pessimistic):
        self.n, self.n_actions, self.tgt = n, n_actions, tgt
        self.s_idx, self.a_idx = s_idx, a_idx
        self.succ, self.lower, self.upper = succ, lower, upper
        self.pessimistic = pessimistic

    def resolve(self, values, rows=slice(None)):
        ext = np.append(values, 0.0)
        succ_val = ext[self.succ[rows]]
        probs = resolve_intervals(self.lower[rows], self.upper[rows], succ_val, self.pessimistic)
        return probs, succ_val

    def bellman(self, values):
        probs, succ_val = self.resolve(values)
        q_flat = (probs * succ_val).sum(1)
        new = np.zeros(self.n)
        np.maximum.at(new, self.s_idx, q_flat)
        new[self.tgt] = 1.0
        return new, q_flat

    def ranked_actions(self, values, q_values, slack: float = 1e-9):
        """Value-optimal actions that also make progress toward the target.

        A plain argmax can pick a self-loop inside an end component whose
        value equals the exit's.  States are therefore ranked by backward
        distance to the target through value-optimal actions whose resolved
        successor distribution puts mass on already-ranked states; ties go to
        the lowest action index.
        """
        s_idx, a_idx = self.s_idx, self.a_idx
        probs, _ = self.resolve(values)
        best = q_values.max(1) if q_values.size else np.zeros(self.n)
        optimal = (q_values[s_idx, a_idx] >= best[s_idx] - slack) & (best[s_idx] > 0)
        action = np.full(self.n, -1, dtype=np.int64)
        ranked = self.tgt.copy()
        while True:
            ranked_ext = np.append(ranked, False)
            progress = optimal & ~ranked[s_idx] & ((probs > 0) & ranked_ext[self.succ]).any(1)
            if not progress.any():
                break
            hit_s, hit_a = s_idx[progress], a_idx[progress]
            order = np.lexsort((hit_a, hit_s))
            first = np.ones(len(order), dtype=bool)
            first[1:] = hit_s[order][1:] != hit_s[order][:-1]
            action[hit_s[order][first]] = hit_a[order][first]
            ranked[hit_s] = True
        # states without progress (value 0, or targets) take the best-valued action
        finite = np.isfinite(q_values)
        rest = (action < 0) & finite.any(1)
        action[rest] = np.argmax(np.where(finite, q_values, -1.0), axis=1)[rest]
        return action

    def q_matrix(self, values):
        _, q_flat = self.bellman(values)
        q_values = np.full((self.n, self.n_actions), -np.inf)
        q_values[self.s_idx, self.a_idx] = q_flat
        return q_values

    def evaluate(self, policy, start, max_rounds: int = 200):
        """Exact value of ``policy`` against a best-responding adversary, or None.

        The adversary is solved by its own policy iteration: resolve the
        intervals against the current values, solve the resulting chain,
        repeat until no row can be resolved to a strictly better response.
        """
        pick = np.full(self.n, -1, dtype=np.int64)
        chosen = policy[self.s_idx] == self.a_idx
        pick[self.s_idx[chosen]] = np.flatnonzero(chosen)
        states = np.flatnonzero((pick >= 0) & ~self.tgt)
        rows = pick[states]
        current = start
        for _ in range(max_rounds):
            probs, _ = self.resolve(current, rows)
            evaluated = self._solve_chain(states, rows, probs)
            check, succ_val = self.resolve(evaluated, rows)
            better = (check * succ_val).sum(1) > evaluated[states] + 1e-12 if not self.pessimistic \
                else (check * succ_val).sum(1) < evaluated[states] - 1e-12
            if not better.any():
                return evaluated
            current = evaluated
        return None

    def strategy_iteration(self, values, max_rounds: int = 200):
        """Improve the ranked greedy policy of ``values`` until no strict gain remains.

        Every evaluated policy value is achievable, hence a lower bound on the
        optimum; the best one found is returned (never below ``values``).
        """
        policy = self.ranked_actions(values, self.q_matrix(values))
        best = values
        current = values
        for _ in range(max_rounds):
            evaluated = self.evaluate(policy, current)
            if evaluated is None:
                break
            best = np.maximum(best, evaluated)
            current = evaluated
            q_values = self.q_matrix(evaluated)
            gain = q_values.max(1) > evaluated + 1e-10
            gain &= policy >= 0
            if not gain.any():
                break
            policy = policy.copy()
            policy[gain] = np.argmax(q_values[gain], axis=1)
        return best

    def _solve_chain(self, states, rows, probs):
        """Reach probabilities of the Markov chain given by ``probs`` on ``states``' rows."""
        n = self.n
        succ = self.succ[rows]
        keep = (succ >= 0) & (probs > 0)
        src = np.repeat(states, keep.sum(1))
        dst = succ[keep]
        weight = probs[keep]
        chain = csr_matrix((weight, (src, dst)), shape=(n, n))
        # states with a positive-probability path into the target
        reaches = self.tgt.copy()
        while True:
            grow = np.asarray(chain[:, reaches].sum(1)).ravel() > 0
            grow &= ~reaches
            if not grow.any():
                break
            reaches |= grow
        unknown = np.flatnonzero(reaches & ~self.tgt)
        out = self.tgt.astype(float)
        if len(unknown):
            sub = chain[unknown][:, unknown]
            rhs = np.asarray(chain[unknown][:, self.tgt].sum(1)).ravel()
            out[unknown] = np.clip(spsolve(identity(len(unknown), format="csc") - sub.tocsc(), rhs),
                                   0.0, 1.0)
        return out


def _as_mask(target, n):
    target = np.asarray(target if not isinstance(target, (set, frozenset)) else sorted(target))
    if target.dtype == bool and target.shape == (n,):
        return target.copy()
    mask = np.zeros(n, dtype=bool)
    mask[target.astype(int)] = True
    return mask
