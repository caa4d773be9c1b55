"""Maximal end components on the graph of positive upper-bound transitions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ..abstraction import IntervalRows
from .values import action_mask


@dataclass(frozen=True)
class Mec:
    states: frozenset
    actions: dict  # state -> frozenset of action indices

    def __len__(self):
        return len(self.states)

    def sorted_states(self) -> tuple:
        return tuple(sorted(self.states))


def _row_arrays(rows: IntervalRows, mask: np.ndarray):
    s_idx, a_idx = np.nonzero(mask)
    r = rows.row_index[s_idx, a_idx]
    succ = np.where(rows.upper[r] > 0, rows.succ[r], -1)
    return s_idx, a_idx, succ


def compute_mecs(rows: IntervalRows, action_map: Optional[np.ndarray] = None,
                 states: Optional[np.ndarray] = None) -> list[Mec]:
    """Iterative SCC refinement.

    Repeatedly drops actions that can leave their state's SCC and states left
    without actions, until stable.  ``states`` (boolean mask) restricts the
    search to a sub-structure.
    """
    n = rows.n_states
    active = np.ones(n, dtype=bool) if states is None else np.asarray(states, dtype=bool).copy()
    allowed = action_mask(rows, action_map) & active[:, None]
    s_idx, a_idx, succ = _row_arrays(rows, allowed)
    keep = np.ones(len(s_idx), dtype=bool)

    while True:
        valid = succ >= 0
        src = np.repeat(s_idx[keep], valid[keep].sum(1))
        dst = succ[keep][valid[keep]]
        graph = csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
        _, comp = connected_components(graph, directed=True, connection="strong")
        comp = np.where(active, comp, -1)
        comp_ext = np.append(comp, -2)
        stays = np.where(valid, comp_ext[succ] == comp[s_idx][:, None], True).all(1)
        stays &= active[s_idx]
        new_keep = keep & stays
        has_action = np.zeros(n, dtype=bool)
        has_action[s_idx[new_keep]] = True
        new_active = active & has_action
        if np.array_equal(new_keep, keep) and np.array_equal(new_active, active):
            break
        keep, active = new_keep, new_active

    groups: dict[int, dict] = {}
    for s, a in zip(s_idx[keep], a_idx[keep]):
        groups.setdefault(int(comp[s]), {}).setdefault(int(s), set()).add(int(a))
    mecs = [Mec(frozenset(acts), {s: frozenset(v) for s, v in acts.items()}) for acts in groups.values()]
    mecs.sort(key=lambda m: m.sorted_states())
    return mecs
