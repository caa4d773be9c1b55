"""Accepting end components, failure states and action-map restriction."""
from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from ..abstraction import IntervalRows
from ..errors import InitialStateViolating, SatisfactionUnreachable
from .mec import Mec, compute_mecs
from .values import ValueBounds, action_mask, interval_value_iteration

ALMOST_SURE = 1.0 - 1e-4


def accepting_mec_states(pimdp, action_map: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean mask of states in some accepting MEC.

    Per Rabin pair, states in the pair's B set are removed first, then MECs
    of the remainder that touch the G set are kept.
    """
    out = np.zeros(pimdp.n_states, dtype=bool)
    for k in range(len(pimdp.pairs)):
        good, bad = pimdp.pair_states(k)
        for mec in compute_mecs(pimdp.rows, action_map, states=~bad):
            members = np.fromiter(mec.states, dtype=np.int64)
            if good[members].any():
                out[members] = True
    return out


def _positive_edges(rows: IntervalRows, mask: np.ndarray):
    s_idx, a_idx = np.nonzero(mask)
    r = rows.row_index[s_idx, a_idx]
    succ = rows.succ[r]
    valid = (succ >= 0) & (rows.upper[r] > 0)
    return np.repeat(s_idx, valid.sum(1)), succ[valid]


def can_reach(rows: IntervalRows, target: np.ndarray, action_map: Optional[np.ndarray] = None) -> np.ndarray:
    """States with a positive-upper-bound path into ``target`` (best-case value > 0)."""
    n = rows.n_states
    src, dst = _positive_edges(rows, action_mask(rows, action_map))
    reverse = csr_matrix((np.ones(len(src)), (dst, src)), shape=(n + 1, n + 1))
    seeds = np.flatnonzero(target)
    if not len(seeds):
        return np.zeros(n, dtype=bool)
    # a virtual root links to every target state
    root = n
    links = csr_matrix((np.ones(len(seeds)), (np.full(len(seeds), root), seeds)), shape=(n + 1, n + 1))
    order = breadth_first_order(reverse + links, root, directed=True, return_predecessors=False)
    out = np.zeros(n + 1, dtype=bool)
    out[order] = True
    return out[:n]


def failure_states(pimdp, action_map: Optional[np.ndarray] = None) -> np.ndarray:
    """States from which the accepting MECs are unreachable even in the best case."""
    return ~can_reach(pimdp.rows, accepting_mec_states(pimdp, action_map), action_map)


def _prune_fixed_point(rows: IntervalRows, bad: np.ndarray, base: np.ndarray):
    """Drop actions with any positive-upper successor in ``bad``; grow ``bad`` until stable."""
    bad = bad.copy()
    s_idx, a_idx = np.nonzero(base)
    r = rows.row_index[s_idx, a_idx]
    succ = rows.succ[r]
    positive = (succ >= 0) & (rows.upper[r] > 0)
    while True:
        bad_ext = np.append(bad, False)
        ok = ~(positive & bad_ext[succ]).any(1) & ~bad[s_idx]
        alive = np.zeros(len(bad), dtype=bool)
        alive[s_idx[ok]] = True
        new_bad = bad | ~alive
        if np.array_equal(new_bad, bad):
            break
        bad = new_bad
    allowed = np.zeros_like(base)
    allowed[s_idx[ok], a_idx[ok]] = True
    return allowed, bad


def prune_nonviolating(pimdp, failure: Optional[np.ndarray] = None):
    """Action map avoiding every positive-probability step into failure states.

    Returns ``(allowed, failure)`` where ``failure`` includes states that
    lost all their actions.
    """
    if failure is None:
        failure = failure_states(pimdp)
    allowed, bad = _prune_fixed_point(pimdp.rows, failure, action_mask(pimdp.rows))
    if pimdp.initial and all(bad[s] for s in pimdp.initial):
        raise InitialStateViolating("every initial state is a failure state")
    return allowed, bad


def prune_satisfying(pimdp, lower_values: np.ndarray, p_sat: float,
                     base_map: Optional[np.ndarray] = None, required: Optional[Iterable[int]] = None):
    """Sub-map on states with worst-case satisfaction probability above ``p_sat``.

    ``required`` (default: the initial states) must keep at least one state,
    otherwise SatisfactionUnreachable is raised.
    """
    if not 0.0 <= p_sat < 1.0:
        raise ValueError("p_sat must lie in [0, 1)")
    base = action_mask(pimdp.rows, base_map)
    allowed, bad = _prune_fixed_point(pimdp.rows, ~(np.asarray(lower_values) > p_sat), base)
    required = tuple(pimdp.initial if required is None else required)
    if required and all(bad[s] for s in required):
        raise SatisfactionUnreachable(f"no required state has worst-case probability above {p_sat}")
    return allowed, ~bad


def select_optimal_mec(mecs: Sequence[Mec], reward: np.ndarray, pimdp, initial: Sequence[int],
                       action_map: Optional[np.ndarray] = None) -> tuple[Mec, ValueBounds]:
    """Highest average-reward MEC among those reached with worst-case probability one.

    ``reward`` is per product state.  Falls back to the MEC with the largest
    worst-case reach probability when none is almost surely reachable.
    Returns the MEC and the value bounds of reaching it.
    """
    if not mecs:
        raise ValueError("no MECs to choose from")
    scored = []
    for mec in mecs:
        members = np.fromiter(mec.states, dtype=np.int64)
        vb = interval_value_iteration(pimdp.rows, members, "worst", action_map)
        reach = min(vb.values[s] for s in initial) if len(initial) else 1.0
        scored.append((mec, vb, reach, float(np.mean(reward[members]))))
    sure = [t for t in scored if t[2] >= ALMOST_SURE]
    if sure:
        best = max(sure, key=lambda t: (t[3], _neg_lex(t[0])))
    else:
        best = max(scored, key=lambda t: (t[2], _neg_lex(t[0])))
    return best[0], best[1]


def _neg_lex(mec: Mec):
    # smaller sorted state tuple wins ties under max()
    return tuple(-s for s in mec.sorted_states()) + (float("inf"),)
