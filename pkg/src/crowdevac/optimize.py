"""Compass search over piecewise-constant leader control schedules.

The search starts from the go-to-target trajectories of the aware leaders,
sampled at the switch times, then repeatedly shifts all control points by
independent uniform perturbations and keeps any candidate whose cost does not
increase.  Candidates are scored with the same simulation seeds as the
incumbent, so comparisons are like-for-like under stochastic initial data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import meso as meso_mod
from . import micro as micro_mod
from .control import ControlSchedule
from .objective import ObjectiveSpec, evaluate_objective
from .results import fmt

__all__ = [
    "CompassConfig",
    "SearchTrace",
    "perturb_schedule",
    "build_initial_schedule",
    "compass_search",
]


@dataclass(frozen=True)
class CompassConfig:
    j_max: int = 50
    j_e: float = 0.0
    perturbation_scale: float = 1.0
    n_switch: int = 10
    seed: int = 0
    evaluations_per_candidate: int = 1

    def __post_init__(self):
        if self.j_max < 1:
            raise ValueError("j_max must be >= 1")
        if not self.perturbation_scale > 0:
            raise ValueError("perturbation_scale must be > 0")
        if self.n_switch < 2:
            raise ValueError("n_switch must be >= 2")
        if self.evaluations_per_candidate < 1:
            raise ValueError("evaluations_per_candidate must be >= 1")


@dataclass
class SearchTrace:
    """Audit trail: one row per candidate plus the accepted best schedule."""

    initial_cost: float
    rows: list = field(default_factory=list)  # (j, candidate_cost, accepted, best_cost)
    best_schedule: Optional[ControlSchedule] = None
    best_cost: float = math.inf
    simulations: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("j,candidate_cost,accepted,best_cost\n")
            fh.write(f"0,{fmt(self.initial_cost)},1,{fmt(self.initial_cost)}\n")
            for j, cand, acc, best in self.rows:
                fh.write(f"{j},{fmt(cand)},{int(acc)},{fmt(best)}\n")


def write_schedule(path, schedule: ControlSchedule) -> None:
    """Structured text block: per leader, one (t_m, P_x, P_y) line per point."""
    with open(path, "w") as fh:
        fh.write(f"control_speed {fmt(schedule.control_speed)}\n")
        for k in schedule.leader_indices:
            fh.write(f"leader {k}\n")
            fh.write(f"  start {fmt(schedule.start[k][0])} {fmt(schedule.start[k][1])}\n")
            for t, p in zip(schedule.switch_times, schedule.points[k]):
                fh.write(f"  {fmt(t)} {fmt(p[0])} {fmt(p[1])}\n")


def perturb_schedule(rng: np.random.Generator, schedule: ControlSchedule,
                     scale: float) -> ControlSchedule:
    """Shift every control point of every optimized leader by an independent
    uniform draw from [-scale, scale]^2; switch times stay fixed."""
    points = {}
    for k in schedule.leader_indices:
        pts = schedule.points[k]
        points[k] = pts + scale * rng.uniform(-1.0, 1.0, size=pts.shape)
    return schedule.replace_points(points)


def _eval_seed(config: CompassConfig, i: int):
    return np.random.SeedSequence(entropy=config.seed, spawn_key=(1, i))


def build_initial_schedule(scenario, scale: str = "micro", seed=None,
                           n_switch: int = 10, steps: Optional[int] = None) -> ControlSchedule:
    """Control points of the aware leaders sampled along a go-to-target run.

    Switch times are spaced uniformly over the horizon; if a leader
    evacuates early its remaining points repeat the frozen position, which
    the schedule treats as hold-position segments.
    """
    params, env = scenario.params, scenario.env
    steps = steps if steps is not None else scenario.run.steps
    dt = params.dt
    horizon = steps * dt
    switch_times = np.array([horizon * (m + 1) / n_switch for m in range(n_switch)])
    switch_steps = [int(round(t / dt)) for t in switch_times]

    if scale == "micro":
        state = scenario.initial_crowd(seed)
        lead = state
    else:
        ens, lead = scenario.initial_meso(seed)
    aware_ids = [int(k) for k in np.flatnonzero(lead.aware)]
    speeds = [lead.strategies[k].control_speed for k in aware_ids
              if lead.strategies[k] is not None]
    control_speed = speeds[0] if speeds else 1.0
    start = {k: lead.lpos[k].copy() for k in aware_ids}
    points = {k: np.zeros((n_switch, 2)) for k in aware_ids}

    if scale == "micro":
        hooks = _micro_rollout(scenario, state, steps)
    else:
        hooks = _meso_rollout(scenario, ens, lead, steps, seed)
    cursor = 0
    for step_no, lpos in hooks:
        while cursor < n_switch and switch_steps[cursor] <= step_no:
            for k in aware_ids:
                points[k][cursor] = lpos[k]
            cursor += 1
        if cursor >= n_switch:
            break
    # pad with the last known positions if the run ended early
    if cursor < n_switch:
        for k in aware_ids:
            tail = points[k][cursor - 1] if cursor > 0 else start[k]
            points[k][cursor:] = tail
    return ControlSchedule(switch_times, points, start, control_speed)


def _micro_rollout(scenario, state, steps):
    from .control import followers_center_of_mass
    from .micro import _leader_controls, euler_step

    yield 0, state.lpos.copy()
    for n in range(1, steps + 1):
        if state.all_evacuated():
            yield n, state.lpos.copy()
            continue
        m_f = followers_center_of_mass(state) if state.factive.any() else None
        controls = _leader_controls(state, None, m_f)
        state = euler_step(scenario.params, scenario.env, state, controls)
        yield n, state.lpos.copy()


def _meso_rollout(scenario, ens, lead, steps, seed):
    from .control import go_to_target_control
    from .meso import _sample_center_of_mass, mfmc_step
    from .scenario import _seed_int

    config = scenario.mfmc_config()
    seed = _seed_int(seed)
    yield 0, lead.lpos.copy()
    for n in range(1, steps + 1):
        if not (ens.active.any() or lead.lactive.any()):
            yield n, lead.lpos.copy()
            continue
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(n,)))
        m_f = _sample_center_of_mass(ens)
        controls = np.zeros((lead.n_leaders, 2))
        for k in range(lead.n_leaders):
            if lead.lactive[k] and lead.strategies[k] is not None:
                controls[k] = go_to_target_control(
                    lead.strategies[k], lead.lpos[k], m_f, ens.time)
        ens, lead = mfmc_step(ens, lead, config, scenario.params, scenario.env,
                              rng, controls)
        yield n, lead.lpos.copy()


def compass_search(scenario, initial_schedule: Optional[ControlSchedule],
                   objective: ObjectiveSpec, config: CompassConfig,
                   scale: str = "micro", steps: Optional[int] = None,
                   cost_fn=None) -> SearchTrace:
    """Iteratively improve the aware leaders' schedule.

    Perturb the incumbent, simulate, and accept whenever the candidate cost
    does not exceed the incumbent's (ties drift).  Stops after j_max
    iterations or as soon as the incumbent cost reaches j_e.  Every candidate
    is averaged over the same simulation seeds (common random numbers).
    ``cost_fn`` replaces the simulate-and-score pipeline when given (used by
    surrogate tests and custom objectives).
    """
    if steps is None and scenario is not None:
        steps = scenario.run.steps
    eval_seeds = [_eval_seed(config, i) for i in range(config.evaluations_per_candidate)]
    perturb_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(0,)))

    if initial_schedule is None:
        if scenario is None:
            raise ValueError("needs either an initial schedule or a scenario")
        initial_schedule = build_initial_schedule(
            scenario, scale=scale, seed=eval_seeds[0], n_switch=config.n_switch,
            steps=steps)

    sims = 0

    def evaluate(schedule) -> float:
        nonlocal sims
        if cost_fn is not None:
            return float(cost_fn(schedule))
        costs = []
        for s in eval_seeds:
            result = scenario.run_once(scale=scale, seed=s, schedule=schedule,
                                       steps=steps, record_stride=max(steps, 1))
            costs.append(evaluate_objective(result, objective))
            sims += 1
        return float(np.mean(costs))

    best = initial_schedule
    best_cost = evaluate(best)
    if not math.isfinite(best_cost):
        raise ValueError("initial schedule is not admissible: non-finite cost")
    trace = SearchTrace(initial_cost=best_cost, best_schedule=best, best_cost=best_cost)

    j = 0
    while j < config.j_max and best_cost > config.j_e:
        j += 1
        candidate = perturb_schedule(perturb_rng, best, config.perturbation_scale)
        cost = evaluate(candidate)
        accepted = cost <= best_cost
        if accepted:
            best = candidate
            best_cost = cost
        trace.rows.append((j, cost, accepted, best_cost))
    trace.best_schedule = best
    trace.best_cost = best_cost
    trace.simulations = sims
    return trace
