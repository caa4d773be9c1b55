"""Grid partition of the workspace and the interval MDP over it.

Cells are indexed ``q = i * ny + j`` where ``i`` counts along x and ``j``
along y.  One extra absorbing state, appended after the last cell,
collects every landing that leaves the workspace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import NonTiling

HAZARD = "Haz"
GOAL = "Goal"


# ---------------------------------------------------------------------------
# partition

@dataclass(frozen=True)
class Partition:
    width: float
    height: float
    cell: float
    nx: int
    ny: int
    labels: tuple  # frozenset of observation symbols per cell

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def index(self, i: int, j: int) -> int:
        return i * self.ny + j

    def coords(self, q: int) -> tuple[int, int]:
        return divmod(q, self.ny)

    def bounds(self, q: int) -> tuple[float, float, float, float]:
        """(x_lo, x_hi, y_lo, y_hi) of cell ``q``."""
        i, j = self.coords(q)
        return i * self.cell, (i + 1) * self.cell, j * self.cell, (j + 1) * self.cell

    def center(self, q: int) -> np.ndarray:
        x0, x1, y0, y1 = self.bounds(q)
        return np.array([(x0 + x1) / 2, (y0 + y1) / 2])

    def centers(self) -> np.ndarray:
        return np.array([self.center(q) for q in range(self.n_cells)])

    def locate(self, x: float, y: float) -> Optional[int]:
        """Cell containing (x, y), or None outside the workspace."""
        if not (0.0 <= x <= self.width and 0.0 <= y <= self.height):
            return None
        i = min(int(x // self.cell), self.nx - 1)
        j = min(int(y // self.cell), self.ny - 1)
        return self.index(i, j)

    def label(self, q: int) -> frozenset:
        return self.labels[q]


def build_partition(bounds, cell_size: float, labels: Optional[Mapping[int, Sequence[str]]] = None) -> Partition:
    """Uniform grid over ``[0, width] x [0, height]``.

    ``labels`` maps cell index to a collection of observation symbols.
    """
    width, height = (float(b) for b in bounds)
    if cell_size <= 0 or width <= 0 or height <= 0:
        raise NonTiling("bounds and cell size must be positive")
    nx, ny = round(width / cell_size), round(height / cell_size)
    if not (math.isclose(nx * cell_size, width, rel_tol=0, abs_tol=1e-9)
            and math.isclose(ny * cell_size, height, rel_tol=0, abs_tol=1e-9)):
        raise NonTiling(f"{width} x {height} is not a multiple of cell size {cell_size}")
    cell_labels = [frozenset()] * (nx * ny)
    for q, syms in (labels or {}).items():
        if not 0 <= q < nx * ny:
            raise NonTiling(f"label on cell {q} outside the grid")
        cell_labels[q] = frozenset(syms)
    return Partition(width, height, float(cell_size), nx, ny, tuple(cell_labels))


# ---------------------------------------------------------------------------
# actions

_DIRECTIONS = {"N": (0, 1), "E": (1, 0), "S": (0, -1), "W": (-1, 0)}


@dataclass(frozen=True)
class HopAction:
    direction: str
    length: int

    @property
    def name(self) -> str:
        return f"{self.direction}{self.length}"

    @property
    def unit(self) -> tuple[int, int]:
        return _DIRECTIONS[self.direction]

    @property
    def offset(self) -> tuple[int, int]:
        di, dj = self.unit
        return di * self.length, dj * self.length


ACTIONS = tuple(HopAction(d, n) for d in "NESW" for n in (1, 2))
ACTION_INDEX = {a.name: k for k, a in enumerate(ACTIONS)}


def action_target(partition: Partition, q: int, action: HopAction) -> Optional[int]:
    i, j = partition.coords(q)
    di, dj = action.offset
    ni, nj = i + di, j + dj
    if 0 <= ni < partition.nx and 0 <= nj < partition.ny:
        return partition.index(ni, nj)
    return None


# ---------------------------------------------------------------------------
# interval transition storage

@dataclass(frozen=True)
class IntervalRows:
    """Padded sparse storage of interval transition rows.

    ``row_index[s, a]`` is the row of state ``s`` under action ``a`` or -1.
    Rows are padded with successor -1 and zero bounds.
    """

    row_index: np.ndarray
    succ: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_states(self) -> int:
        return self.row_index.shape[0]

    @property
    def n_actions(self) -> int:
        return self.row_index.shape[1]

    def row(self, s: int, a: int):
        r = self.row_index[s, a]
        if r < 0:
            raise KeyError(f"action {a} unavailable at state {s}")
        keep = self.succ[r] >= 0
        return self.succ[r][keep], self.lower[r][keep], self.upper[r][keep]

    def available(self, s: int) -> list[int]:
        return [a for a in range(self.n_actions) if self.row_index[s, a] >= 0]

    def row_states(self) -> np.ndarray:
        """State owning each row."""
        owner = np.empty(len(self.succ), dtype=np.int64)
        s_idx, a_idx = np.nonzero(self.row_index >= 0)
        owner[self.row_index[s_idx, a_idx]] = s_idx
        return owner

    @classmethod
    def from_entries(cls, n_states: int, n_actions: int, entries: Mapping) -> "IntervalRows":
        """``entries[(s, a)] = (successors, lower, upper)``; inserted in (s, a) order."""
        keys = sorted(entries)
        width = max((len(entries[k][0]) for k in keys), default=1) or 1
        row_index = np.full((n_states, n_actions), -1, dtype=np.int64)
        succ = np.full((len(keys), width), -1, dtype=np.int64)
        lower = np.zeros((len(keys), width))
        upper = np.zeros((len(keys), width))
        for r, (s, a) in enumerate(keys):
            nxt, lo, hi = entries[(s, a)]
            row_index[s, a] = r
            succ[r, :len(nxt)] = nxt
            lower[r, :len(nxt)] = lo
            upper[r, :len(nxt)] = hi
        return cls(row_index, succ, lower, upper)


# ---------------------------------------------------------------------------
# IMDP

@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.1
    bound: float = 0.2

    def __post_init__(self):
        if self.sigma <= 0 or self.bound <= 0:
            raise ValueError("noise sigma and bound must be positive")

    def interval_probability(self, lo, hi, mean):
        """P(lo <= mean + noise <= hi) for the truncated Gaussian noise."""
        return self.cdf(np.asarray(hi) - mean) - self.cdf(np.asarray(lo) - mean)

    def cdf(self, t):
        t = np.clip(t, -self.bound, self.bound)
        z0 = ndtr(-self.bound / self.sigma)
        z1 = ndtr(self.bound / self.sigma)
        return np.clip((ndtr(t / self.sigma) - z0) / (z1 - z0), 0.0, 1.0)


@dataclass(frozen=True)
class Imdp:
    partition: Partition
    rows: IntervalRows
    initial: tuple
    labels: tuple  # per state, including the out-of-bounds state
    actions: tuple = ACTIONS

    @property
    def n_states(self) -> int:
        return self.rows.n_states

    @property
    def oob_state(self) -> int:
        return self.partition.n_cells

    @property
    def observations(self) -> frozenset:
        return frozenset().union(*self.labels)

    def check_consistency(self, tol: float = 1e-9) -> bool:
        lo_sum = self.rows.lower.sum(1)
        hi_sum = self.rows.upper.sum(1)
        return bool(np.all(self.rows.lower <= self.rows.upper + tol)
                    and np.all(lo_sum <= 1 + tol) and np.all(hi_sum >= 1 - tol))


def _axis_bounds(noise: NoiseModel, cell_lo, cell_hi, mean_lo, mean_hi):
    """Min and max over mean in [mean_lo, mean_hi] of P(landing in [cell_lo, cell_hi])."""
    p_lo = noise.interval_probability(cell_lo, cell_hi, mean_lo)
    p_hi = noise.interval_probability(cell_lo, cell_hi, mean_hi)
    closest = np.clip((np.asarray(cell_lo) + cell_hi) / 2, mean_lo, mean_hi)
    return np.minimum(p_lo, p_hi), noise.interval_probability(cell_lo, cell_hi, closest)


def landing_mean_set(partition: Partition, gp_x, gp_y, ctrl_err: float, z: float = 2.0,
                     compensated: bool = True):
    """Per (cell, axis) half-width and mean offset of the landing-mean uncertainty set.

    With ``compensated`` the controller subtracts the GP mean from its
    target, so the landing mean is centered on the target cell center.
    """
    centers = partition.centers()
    mx, vx = gp_x.predict(centers)
    my, vy = gp_y.predict(centers)
    half = np.column_stack([z * np.sqrt(vx), z * np.sqrt(vy)]) + ctrl_err
    offset = np.zeros_like(half) if compensated else np.column_stack([mx, my])
    return offset, half


def row_intervals(partition: Partition, noise: NoiseModel, target_center, offset, half):
    """Interval row for a landing aimed at ``target_center``.

    Returns (successor cells, lower, upper) with the out-of-bounds state last
    when it has positive upper probability.
    """
    per_axis = []
    for axis, (n_cells, extent) in enumerate(((partition.nx, partition.width),
                                              (partition.ny, partition.height))):
        m_lo = target_center[axis] + offset[axis] - half[axis]
        m_hi = target_center[axis] + offset[axis] + half[axis]
        reach_lo, reach_hi = m_lo - noise.bound, m_hi + noise.bound
        first = max(0, int(math.floor(reach_lo / partition.cell)))
        last = min(n_cells - 1, int(math.ceil(reach_hi / partition.cell)) - 1)
        idx = np.arange(first, last + 1)
        pmin, pmax = _axis_bounds(noise, idx * partition.cell, (idx + 1) * partition.cell, m_lo, m_hi)
        in_min, in_max = _axis_bounds(noise, 0.0, extent, m_lo, m_hi)
        per_axis.append((idx, pmin, pmax, float(in_min), float(in_max)))
    (ix, xmin, xmax, xin_lo, xin_hi), (iy, ymin, ymax, yin_lo, yin_hi) = per_axis
    succ = (ix[:, None] * partition.ny + iy[None, :]).ravel()
    lower = (xmin[:, None] * ymin[None, :]).ravel()
    upper = (xmax[:, None] * ymax[None, :]).ravel()
    keep = upper > 0
    succ, lower, upper = list(succ[keep]), list(lower[keep]), list(upper[keep])
    oob_hi = 1.0 - xin_lo * yin_lo
    if oob_hi > 0:
        succ.append(partition.n_cells)
        lower.append(max(0.0, 1.0 - xin_hi * yin_hi))
        upper.append(oob_hi)
    return np.array(succ, dtype=np.int64), np.array(lower), np.array(upper)


def estimate_intervals(partition: Partition, gp_x, gp_y, noise: NoiseModel, ctrl_err: float,
                       initial: Sequence[int] = (), z: float = 2.0, compensated: bool = True) -> Imdp:
    """Interval MDP from the current GP posterior, noise model and controller error."""
    offset, half = landing_mean_set(partition, gp_x, gp_y, ctrl_err, z, compensated)
    oob = partition.n_cells
    entries = {}
    for q in range(partition.n_cells):
        for a, action in enumerate(ACTIONS):
            target = action_target(partition, q, action)
            if target is None:
                continue
            entries[(q, a)] = row_intervals(partition, noise, partition.center(target),
                                            offset[q], half[q])
    for a in range(len(ACTIONS)):
        entries[(oob, a)] = (np.array([oob]), np.array([1.0]), np.array([1.0]))
    rows = IntervalRows.from_entries(oob + 1, len(ACTIONS), entries)
    labels = partition.labels + (frozenset({HAZARD}),)
    return Imdp(partition, rows, tuple(initial), labels)
