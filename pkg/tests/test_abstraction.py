import math

import numpy as np
import pytest

from oracles import extreme_over_means, truncated_interval_probability
from slipnav import gp
from slipnav.abstraction import (ACTION_INDEX, ACTIONS, GOAL, HAZARD, IntervalRows, NoiseModel,
                                 action_target, build_partition, estimate_intervals,
                                 landing_mean_set)
from slipnav.errors import NonTiling

PRIOR = (gp.SparseGp.prior(), gp.SparseGp.prior())


def test_partition_indexing_and_location():
    part = build_partition((5.0, 4.0), 1.0, {3: ["Goal"]})
    assert (part.nx, part.ny, part.n_cells) == (5, 4, 20)
    q = part.index(2, 3)
    assert q == 11 and part.coords(q) == (2, 3)
    assert np.allclose(part.center(q), [2.5, 3.5])
    assert part.bounds(q) == (2.0, 3.0, 3.0, 4.0)
    assert part.locate(2.5, 3.5) == q
    assert part.locate(-0.1, 1.0) is None and part.locate(5.01, 1.0) is None
    assert part.locate(5.0, 1.0) == part.index(4, 1)  # the outer boundary is closed
    assert part.label(3) == frozenset({"Goal"}) and part.label(4) == frozenset()


def test_non_tiling_workspace():
    with pytest.raises(NonTiling):
        build_partition((5.5, 4.0), 1.0)


def test_action_order_and_targets():
    # N, E, S, W with one- and two-cell lengths
    assert [a.name for a in ACTIONS] == ["N1", "N2", "E1", "E2", "S1", "S2", "W1", "W2"]
    part = build_partition((4.0, 4.0), 1.0)
    q = part.index(1, 1)
    assert action_target(part, q, ACTIONS[ACTION_INDEX["N2"]]) == part.index(1, 3)
    assert action_target(part, q, ACTIONS[ACTION_INDEX["W1"]]) == part.index(0, 1)
    assert action_target(part, q, ACTIONS[ACTION_INDEX["W2"]]) is None


def test_noise_model_probabilities():
    # quadrature of the truncated density
    noise = NoiseModel(0.1, 0.2)
    for lo, hi, mean in [(0.0, 1.0, 0.5), (0.0, 1.0, 0.9), (1.0, 2.0, 0.95), (-3, 3, 0.0)]:
        ref = truncated_interval_probability(lo, hi, mean, 0.1, 0.2)
        assert noise.interval_probability(lo, hi, mean) == pytest.approx(ref, abs=1e-10)
    assert noise.interval_probability(2.0, 3.0, 0.5) == 0.0


def test_interval_rows_from_entries():
    rows = IntervalRows.from_entries(3, 2, {(1, 0): ([0, 2], [0.2, 0.3], [0.7, 0.8]),
                                            (0, 1): ([1], [1.0], [1.0])})
    assert rows.row_index.tolist() == [[-1, 0], [1, -1], [-1, -1]]
    succ, lo, hi = rows.row(1, 0)
    assert succ.tolist() == [0, 2] and lo.tolist() == [0.2, 0.3]
    assert rows.available(0) == [1]
    assert rows.row_states().tolist() == [0, 1]
    with pytest.raises(KeyError):
        rows.row(2, 0)


def test_prior_intervals_are_consistent():
    part = build_partition((6.0, 6.0), 1.0, {0: [HAZARD], 35: [GOAL]})
    imdp = estimate_intervals(part, *PRIOR, NoiseModel(), 0.04, initial=(7,))
    assert imdp.check_consistency()
    assert imdp.n_states == 37 and imdp.oob_state == 36
    assert imdp.labels[36] == frozenset({HAZARD})
    assert imdp.observations == frozenset({HAZARD, GOAL})
    # the out-of-bounds state absorbs under every action
    for a in range(8):
        assert imdp.rows.row(36, a)[0].tolist() == [36]
    # actions leaving the grid are unavailable
    assert imdp.rows.row_index[part.index(0, 0), ACTION_INDEX["S1"]] == -1


def test_tight_intervals_are_almost_deterministic():
    part = build_partition((5.0, 5.0), 1.0)
    noise = NoiseModel(0.05, 0.2)
    imdp = estimate_intervals(part, *PRIOR, noise, ctrl_err=0.0, z=0.0)
    succ, lo, hi = imdp.rows.row(part.index(2, 2), ACTION_INDEX["E1"])
    k = list(succ).index(part.index(3, 2))
    p = truncated_interval_probability(-0.5, 0.5, 0.0, 0.05, 0.2)
    assert lo[k] == pytest.approx(p * p, abs=1e-12) and hi[k] == pytest.approx(p * p, abs=1e-12)


def test_rows_match_quadrature_oracle(rng):
    # dense mean-set enumeration and quadrature on a few rows
    part = build_partition((8.0, 8.0), 1.0)
    noise = NoiseModel(0.1, 0.2)
    data = gp.ResidualDataset(rng.uniform(0, 8, (30, 2)), rng.normal(0, 0.2, (30, 2)))
    gx, gy = gp.fit(data, eta=30)
    ctrl = 0.04
    imdp = estimate_intervals(part, gx, gy, noise, ctrl)
    for q, a in [(27, 3), (9, 1)]:
        if imdp.rows.row_index[q, a] < 0:
            continue
        target = action_target(part, q, ACTIONS[a])
        ti, tj = part.coords(target)
        center = ((ti + 0.5) * part.cell, (tj + 0.5) * part.cell)
        src = part.center(q)
        half = [2 * math.sqrt(gx.predict(src)[1]) + ctrl, 2 * math.sqrt(gy.predict(src)[1]) + ctrl]
        succ, lo, hi = imdp.rows.row(q, a)
        for k, s in enumerate(succ):
            if s == part.n_cells:
                continue
            i, j = part.coords(s)
            ext = [extreme_over_means(c, c + 1.0, center[ax] - half[ax], center[ax] + half[ax], 0.1, 0.2)
                   for ax, c in ((0, float(i)), (1, float(j)))]
            assert lo[k] == pytest.approx(ext[0][0] * ext[1][0], abs=1e-6)
            assert hi[k] == pytest.approx(ext[0][1] * ext[1][1], abs=1e-6)


def test_landing_mean_set_uses_gp_variance():
    part = build_partition((3.0, 3.0), 1.0)
    offset, half = landing_mean_set(part, *PRIOR, ctrl_err=0.05)
    assert np.allclose(offset, 0.0)
    assert np.allclose(half, 2 * 0.3 + 0.05)
    data = gp.ResidualDataset(np.array([[1.5, 1.5]] * 5), np.array([[0.2, -0.1]] * 5))
    gx, gy = gp.fit(data)
    offset, half = landing_mean_set(part, gx, gy, 0.05, compensated=False)
    assert offset[part.index(1, 1), 0] > 0.1 and offset[part.index(1, 1), 1] < -0.05
    assert half[part.index(1, 1), 0] < half[part.index(0, 0), 0]
