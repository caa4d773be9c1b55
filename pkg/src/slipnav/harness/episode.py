"""Episodes: hop execution, batch GP refits, re-synthesis and policy switching."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .. import gp as gplib
from ..abstraction import ACTIONS, GOAL, HAZARD, action_target, estimate_intervals
from ..automata import MtPimdp, product
from ..controller import BACKUP_THRESHOLD, AngleSolution, solve_leg_angles
from ..dynamics import InterstitialState, nominal_hop, step_hop
from ..errors import DynamicsError, InitialStateViolating, SatisfactionUnreachable
from ..synthesis import (EXPLORATION, GOAL_REACHING, LtlStrategy, QTable, accepting_mec_states,
                         can_reach, compute_mecs, exploration_policy, goal_reaching_policy,
                         interval_value_iteration, prune_nonviolating, prune_satisfying,
                         q_learn_offline, select_optimal_mec)
from .config import EnvironmentConfig, RunConfig
from .world import World, build_world, measured_ctrl_err, model_path

SATISFIED = "satisfied"
HAZARD_HIT = "hazard"
OUT_OF_BOUNDS = "out_of_bounds"
STEP_CAP = "step_cap"
CRASH = "crash"


# ---------------------------------------------------------------------------
# logs

@dataclass
class HopLog:
    index: int
    start: tuple
    start_cell: int
    product_state: int
    mode: str
    branch: str
    requested_action: str
    action: str
    backup: bool
    alpha: float
    beta: float
    target_disp: tuple
    predicted_disp: tuple
    realized_disp: tuple
    end: tuple
    end_cell: int  # -1 outside the workspace
    reward: float


@dataclass
class RunLog:
    env: dict
    run: dict
    seed: int
    hops: list = field(default_factory=list)
    batches: list = field(default_factory=list)
    outcome: str = ""
    satisfied: bool = False
    steps: int = 0
    total_reward: float = 0.0
    switch_step: Optional[int] = None
    ctrl_err: float = 0.0

    @property
    def switched(self) -> bool:
        return self.switch_step is not None

    def positions(self) -> list:
        if not self.hops:
            return []
        return [tuple(self.hops[0].start)] + [tuple(h.end) for h in self.hops]

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "RunLog":
        data = dict(data)
        hops = [HopLog(**{k: tuple(v) if isinstance(v, list) else v for k, v in h.items()})
                for h in data.pop("hops", [])]
        return cls(hops=hops, **data)


# ---------------------------------------------------------------------------
# synthesis

@dataclass
class Plan:
    pimdp: MtPimdp
    lower: np.ndarray  # worst-case satisfaction probability per product state
    nonviolating: np.ndarray
    satisfying: np.ndarray  # action map, all False where the state is dropped
    satisfying_states: np.ndarray
    explore_ltl: LtlStrategy
    goal_ltl: LtlStrategy
    fallback_ltl: LtlStrategy
    qtable: Optional[QTable]


def synthesize(world: World, gps, run: RunConfig, ctrl_err: float, cell: int, dra_state: int) -> Plan:
    """Intervals, product, pruned action maps, LTL strategies and (known-reward) Q-table."""
    imdp = estimate_intervals(world.partition, gps[0], gps[1], world.noise, ctrl_err,
                              initial=(world.start_cell,))
    pimdp = product(imdp, world.dra, world.cell_reward)
    current = pimdp.join(cell, dra_state)
    rows = pimdp.rows
    accepting = accepting_mec_states(pimdp)
    failure = ~can_reach(rows, accepting)
    try:
        nonviolating, _ = prune_nonviolating(pimdp, failure)
    except InitialStateViolating:
        nonviolating = np.zeros_like(rows.row_index, dtype=bool)
    worst = interval_value_iteration(rows, accepting, "worst")
    try:
        satisfying, kept = prune_satisfying(pimdp, worst.values, run.p_sat, required=())
    except SatisfactionUnreachable:  # pragma: no cover - required=() never raises
        satisfying, kept = np.zeros_like(nonviolating), np.zeros(pimdp.n_states, dtype=bool)
    goal_vb = interval_value_iteration(rows, accepting, "worst", satisfying)
    goal_ltl = LtlStrategy(goal_vb.action)
    fallback_ltl = LtlStrategy(worst.action)

    explore_ltl = LtlStrategy(np.full(pimdp.n_states, -1))
    if nonviolating.any():
        mecs = compute_mecs(rows, nonviolating)
        if mecs:
            mec, reach_vb = select_optimal_mec(mecs, pimdp.state_reward(), pimdp, (current,), nonviolating)
            explore_ltl = LtlStrategy(reach_vb.action,
                                      {s: tuple(sorted(a)) for s, a in mec.actions.items()})
    qtable = None
    if run.reward_mode == "known":
        qtable = q_learn_offline(rows, pimdp.state_reward(), nonviolating)
    return Plan(pimdp, worst.values, nonviolating, satisfying, kept, explore_ltl, goal_ltl,
                fallback_ltl, qtable)


# ---------------------------------------------------------------------------
# episode

_PRIOR_PLANS: dict = {}
_PRIOR_PLAN_LIMIT = 16


def _prior_plan(world: World, run: RunConfig, ctrl_err: float, cell: int, dra_state: int) -> Plan:
    """Synthesis under the GP prior; identical for every episode of a world, so it is memoized."""
    key = (json.dumps(world.env.to_dict(), sort_keys=True), run.p_sat, run.reward_mode, ctrl_err,
           cell, dra_state)
    plan = _PRIOR_PLANS.get(key)
    if plan is None:
        if len(_PRIOR_PLANS) >= _PRIOR_PLAN_LIMIT:
            _PRIOR_PLANS.pop(next(iter(_PRIOR_PLANS)))
        plan = synthesize(world, (gplib.SparseGp.prior(), gplib.SparseGp.prior()), run, ctrl_err,
                          cell, dra_state)
        _PRIOR_PLANS[key] = plan
    return plan


def product_size(world: World) -> int:
    """Number of product states for ``world`` (cells, out-of-bounds, and a sink for partial automata)."""
    n_dra = world.dra.n_states + (0 if world.dra.is_complete() else 1)
    return (world.partition.n_cells + 1) * n_dra


def new_qtable(env: EnvironmentConfig) -> QTable:
    """Empty Q-table sized for ``env``'s product, for carrying reward knowledge across episodes."""
    return QTable.zeros(product_size(build_world(env)), len(ACTIONS))


def _streams(seed: int):
    noise, branch, action = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(noise), np.random.default_rng(branch),
            np.random.default_rng(action))


def _gp_snapshot(step, gps, dataset, partition):
    centers = partition.centers()
    mx, vx = gps[0].predict(centers)
    my, vy = gps[1].predict(centers)
    return {"step": step, "n_data": len(dataset),
            "mean_x": [round(float(v), 12) for v in mx], "mean_y": [round(float(v), 12) for v in my],
            "std_x": [round(float(math.sqrt(v)), 12) for v in vx],
            "std_y": [round(float(math.sqrt(v)), 12) for v in vy]}


def _solve(world: World, gps, state: InterstitialState, a: int, q: int):
    """Leg angles aiming the hop at the center of action ``a``'s target cell."""
    part = world.partition
    target_cell = action_target(part, q, ACTIONS[a])
    start = np.array([state.x, state.y])
    mu = np.array([gps[0].predict(start)[0], gps[1].predict(start)[0]])
    target = part.center(target_cell) - start - mu
    v_des = world.gait.velocity(ACTIONS[a].unit)
    return solve_leg_angles(world.model, state.velocity, target, v_des), target


def _feasible(world: World, state: InterstitialState, sol: AngleSolution) -> bool:
    try:
        nominal_hop(state.velocity, sol.placement, world.params)
    except DynamicsError:
        return False
    return True


def run_episode(env: EnvironmentConfig, run: RunConfig, qtable: Optional[QTable] = None,
                seed: Optional[int] = None) -> RunLog:
    """One episode from the start cell until goal, hazard, crash or the step cap.

    ``qtable`` carries reward knowledge between episodes in unknown-reward
    mode and is updated in place.  ``seed`` overrides ``run.seed``.
    """
    world = build_world(env)
    seed = run.seed if seed is None else seed
    ctrl_err = run.ctrl_err if run.ctrl_err is not None else \
        measured_ctrl_err(model_path(env), world.params, env.speed)
    part = world.partition
    noise_rng, branch_rng, action_rng = _streams(seed)
    online = run.reward_mode == "unknown"

    # the output directory does not influence the episode, so it stays out of the log
    settings = {k: v for k, v in run.to_dict().items() if k != "out"}
    log = RunLog(env.to_dict(), settings, seed, ctrl_err=ctrl_err)
    gps = (gplib.SparseGp.prior(), gplib.SparseGp.prior())
    records: list = []
    heading = np.array(env.start_heading, dtype=float)
    v0 = world.gait.velocity(heading)
    start = world.start_position()
    state = InterstitialState(start[0], start[1], v0[0], v0[1], v0[2], 0)
    q = world.start_cell
    s = world.dra.step(world.dra.initial, part.label(q))
    s = world.dra.n_states if s is None else s
    mode, m = EXPLORATION, 0

    plan = None
    for step in range(run.step_cap + 1):
        if step % run.batch == 0:
            if step > 0:
                dataset = gplib.residuals_from_log(records)
                gps = gplib.fit(dataset, run.eta, gplib.KernelSettings(optimize=run.gp_optimize),
                                seed=seed)
                plan = synthesize(world, gps, run, ctrl_err, q, s)
            else:
                dataset = gplib.ResidualDataset.empty()
                plan = _prior_plan(world, run, ctrl_err, q, s)
            if online and qtable is None:
                qtable = QTable.zeros(plan.pimdp.n_states, len(ACTIONS))
            log.batches.append(_gp_snapshot(step, gps, dataset, part))
            p = plan.pimdp.join(q, s)
            if mode == EXPLORATION and plan.satisfying_states[p] and plan.satisfying[p].any():
                mode, m = GOAL_REACHING, 0
                if log.switch_step is None:
                    log.switch_step = step
        if step == run.step_cap:
            log.outcome = STEP_CAP
            break

        pimdp = plan.pimdp
        p = pimdp.join(q, s)
        if mode == GOAL_REACHING and not plan.satisfying[p].any():
            mode = EXPLORATION
        q_table = qtable if online else plan.qtable
        if q_table is None:
            q_table = QTable.zeros(pimdp.n_states, len(ACTIONS))
        rngs = {"branch_rng": branch_rng, "action_rng": action_rng}
        if mode == GOAL_REACHING:
            policy = goal_reaching_policy(plan.goal_ltl, plan.satisfying, q_table, run.c, run.eps,
                                          online=online, m=m, **rngs)
        elif plan.nonviolating[p].any():
            policy = exploration_policy(plan.explore_ltl, plan.nonviolating, q_table, run.p_rl_ee,
                                        online=online, **rngs)
        else:
            available = pimdp.rows.row_index >= 0
            policy = exploration_policy(plan.fallback_ltl, available, q_table, 0.0, online=online, **rngs)
        requested, branch = policy.select(p)
        m = policy.m if mode == GOAL_REACHING else m

        sol, target = _solve(world, gps, state, requested, q)
        action, backup = requested, False
        if sol.disp_error > BACKUP_THRESHOLD * part.cell or not _feasible(world, state, sol):
            cands = []
            for a in np.flatnonzero(policy.allowed[p]):
                cs, ct = (sol, target) if a == requested else _solve(world, gps, state, int(a), q)
                cands.append((cs.cost, int(a), cs, ct))
            cands.sort(key=lambda c: (c[0], c[1]))
            chosen = next((c for c in cands if _feasible(world, state, c[2])), None)
            if chosen is None:
                log.outcome = CRASH
                break
            _, action, sol, target = chosen
            backup = action != requested

        new_state = step_hop(state, sol.placement, world.params, world.perturbation, noise_rng)
        realized = np.array([new_state.x - state.x, new_state.y - state.y])
        q_next = part.locate(new_state.x, new_state.y)
        cell_next = part.n_cells if q_next is None else q_next
        reward = float(world.cell_reward[cell_next])
        s_next = pimdp.next_dra(q, s)
        p_next = pimdp.join(cell_next, s_next)
        label = pimdp.imdp.labels[cell_next]
        terminal = q_next is None or HAZARD in label or GOAL in label
        if online:
            qtable.update(p, action, reward, p_next, policy.allowed[p_next], terminal)
        records.append(gplib.HopRecord((state.x, state.y), tuple(sol.predicted_disp), tuple(realized)))
        log.hops.append(HopLog(step, (state.x, state.y), q, p, mode, branch, ACTIONS[requested].name,
                               ACTIONS[action].name, backup, sol.placement.alpha, sol.placement.beta,
                               tuple(float(v) for v in target),
                               tuple(float(v) for v in sol.predicted_disp),
                               tuple(float(v) for v in realized), (new_state.x, new_state.y),
                               -1 if q_next is None else q_next, reward))
        log.total_reward += reward
        state, q, s = new_state, cell_next, s_next
        if q_next is None:
            log.outcome = OUT_OF_BOUNDS
            break
        if HAZARD in label:
            log.outcome = HAZARD_HIT
            break
        if GOAL in label:
            log.outcome = SATISFIED
            log.satisfied = True
            break
    log.steps = len(log.hops)
    return log
