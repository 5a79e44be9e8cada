"""Microscopic follower-leader dynamics.

Followers obey a second-order law: self-propulsion (speed relaxation plus
steering toward a visible exit), metrical short-range repulsion from everyone,
and topological alignment with the minimal ball holding at least ``n_top``
agents.  Leaders are first order: repulsion plus their control.  Integration
is forward Euler with the velocity updated first and the position advanced
with the new velocity; velocities pass through the obstacle cut-off, and
agents entering a capture disk are frozen.

The per-agent functions here are straightforward reference implementations
used by the tests; the integrator runs on the array kernels in
`crowdevac.kernels`, which implement the same formulas.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import kernels
from .control import followers_center_of_mass, go_to_target_control, schedule_to_control
from .env import Environment, visibility_indicator
from .params import ModelParams
from .results import RunRecorder, SimResult
from .state import CrowdState

__all__ = [
    "repulsion_kernel",
    "self_propulsion",
    "topological_ball",
    "follower_acceleration",
    "leader_velocity",
    "euler_step",
    "simulate",
]


def repulsion_kernel(x, y, gamma: float, r: float) -> float:
    """exp(-|y-x|**gamma)/|y-x| for 0 < |y-x| < r, else 0."""
    if r <= 0:
        raise ValueError("repulsion radius must be > 0")
    d = float(np.linalg.norm(np.asarray(y, dtype=float) - np.asarray(x, dtype=float)))
    if d <= 0.0 or d >= r:
        return 0.0
    return math.exp(-d ** gamma) / d


def self_propulsion(params: ModelParams, env: Environment, x, v) -> np.ndarray:
    """Speed relaxation toward the characteristic speed, plus steering toward
    the exit whose visibility disk contains x (if any)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    out = params.c_s * (params.s2 - float(v @ v)) * v
    e = visibility_indicator(env, x)
    if e is not None:
        d = env.exits[e].position - x
        n = float(np.linalg.norm(d))
        unit = d / n if n > 0 else np.zeros(2)
        out = out + params.c_tau * (unit - v)
    return out


def topological_ball(center_index: int, all_positions, n_top: int) -> set[int]:
    """Ids inside the minimal ball around the chosen agent holding at least
    n_top agents (the center counts; boundary ties are all included)."""
    pos = np.asarray(all_positions, dtype=float).reshape(-1, 2)
    n = len(pos)
    if n_top > n:
        raise ValueError(f"need at least {n_top} agents, have {n}")
    d = np.sqrt(((pos - pos[center_index]) ** 2).sum(axis=1))
    radius = np.partition(d, n_top - 1)[n_top - 1]
    return set(np.flatnonzero(d <= radius).tolist())


def _merged_active(state: CrowdState):
    """Active followers then active leaders: positions, velocities, masses,
    per-agent repulsion and alignment coefficients resolved by kind."""
    af = np.flatnonzero(state.factive)
    al = np.flatnonzero(state.lactive)
    pos = np.concatenate([state.fpos[af], state.lpos[al]], axis=0)
    vel = np.concatenate([state.fvel[af], state.lvel[al]], axis=0)
    mass = np.concatenate([state.fmass[af], state.lmass[al]])
    is_leader = np.concatenate([np.zeros(len(af), bool), np.ones(len(al), bool)])
    return af, al, pos, vel, mass, is_leader


def follower_acceleration(params: ModelParams, env: Environment,
                          state: CrowdState, i: int) -> np.ndarray:
    """Total acceleration on active follower i (reference implementation)."""
    if not state.factive[i]:
        raise ValueError(f"follower {i} is evacuated")
    x = state.fpos[i]
    v = state.fvel[i]
    acc = self_propulsion(params, env, x, v)
    af, al, pos, vel, mass, is_leader = _merged_active(state)
    for j in range(len(pos)):
        w = repulsion_kernel(x, pos[j], params.gamma, params.r)
        c = params.c_r_l if is_leader[j] else params.c_r_f
        acc = acc - c * mass[j] * w * (pos[j] - x)
    if visibility_indicator(env, x) is None:
        center = int(np.flatnonzero(af == i)[0])
        ball = topological_ball(center, pos, min(params.n_top, len(pos)))
        for j in ball:
            c = params.c_al_l if is_leader[j] else params.c_al_f
            acc = acc + c * mass[j] * (vel[j] - v)
    return acc


def leader_velocity(params: ModelParams, env: Environment, state: CrowdState,
                    k: int, u) -> np.ndarray:
    """Velocity of active leader k: repulsion sums plus the control u.

    The repulsion kernel exponent on the leader side equals the radius
    parameter (they coincide in all bundled parameter sets).
    """
    if not state.lactive[k]:
        raise ValueError(f"leader {k} is evacuated")
    y = state.lpos[k]
    out = np.asarray(u, dtype=float).copy()
    zeta = params.r
    af, al, pos, vel, mass, is_leader = _merged_active(state)
    for j in range(len(pos)):
        w = repulsion_kernel(y, pos[j], zeta, params.r)
        out = out - params.c_r_l * mass[j] * w * (pos[j] - y)
    return out


def _apply_capture(env: Environment, state: CrowdState, time: float) -> None:
    """Mark active agents inside a capture disk as evacuated (in place)."""
    act = np.flatnonzero(state.factive)
    if len(act):
        cap = env.capture_indices(state.fpos[act])
        hit = cap >= 0
        state.fevac[act[hit]] = time
        state.fexit[act[hit]] = cap[hit]
    act = np.flatnonzero(state.lactive)
    if len(act):
        cap = env.capture_indices(state.lpos[act])
        hit = cap >= 0
        state.levac[act[hit]] = time
        state.lexit[act[hit]] = cap[hit]


def euler_step(params: ModelParams, env: Environment, state: CrowdState,
               controls: np.ndarray) -> CrowdState:
    """One forward-Euler step; evacuated agents are frozen.

    ``controls`` holds one 2-vector per leader (rows of inactive leaders are
    ignored).  Velocities are updated first, passed through the obstacle
    cut-off, and positions advance with the new velocities; agents entering a
    capture disk are marked evacuated at the new time.
    """
    new = state.copy()
    fact = state.factive
    lact = state.lactive
    fact8 = fact.astype(np.uint8)
    lact8 = lact.astype(np.uint8)
    vis = env.visibility_indices(state.fpos) if state.n_followers else \
        np.zeros(0, dtype=np.int64)

    acc = kernels.follower_accelerations(
        state.fpos, state.fvel, state.fmass, fact8,
        state.lpos, state.lvel, state.lmass, lact8,
        vis, env.exit_positions,
        params.c_s, params.s2, params.c_tau, params.c_r_f, params.c_r_l,
        params.c_al_f, params.c_al_l, params.gamma, params.r, params.n_top)
    w = kernels.leader_velocities(
        state.lpos, state.lvel, state.lmass, lact8,
        state.fpos, state.fmass, fact8,
        np.asarray(controls, dtype=float).reshape(-1, 2),
        params.c_r_l, params.r, params.r)

    n_f = state.n_followers
    stacked_pos = np.concatenate([state.fpos, state.lpos], axis=0)
    stacked_vel = np.concatenate([state.fvel + params.dt * acc, w], axis=0)
    proj = env.project_velocities(stacked_pos, stacked_vel, params.dt)
    if fact.any():
        new.fvel[fact] = proj[:n_f][fact]
        new.fpos[fact] = state.fpos[fact] + params.dt * proj[:n_f][fact]
    if lact.any():
        new.lvel[lact] = proj[n_f:][lact]
        new.lpos[lact] = state.lpos[lact] + params.dt * proj[n_f:][lact]

    new.time = state.time + params.dt
    _apply_capture(env, new, new.time)
    return new


def _leader_controls(state: CrowdState, schedule, m_f) -> np.ndarray:
    controls = np.zeros((state.n_leaders, 2))
    for k in range(state.n_leaders):
        if not state.lactive[k]:
            continue
        if schedule is not None and state.aware[k] and k in schedule.points:
            controls[k] = schedule_to_control(schedule, k, state.time)
        elif state.strategies[k] is not None:
            controls[k] = go_to_target_control(
                state.strategies[k], state.lpos[k], m_f, state.time)
    return controls


def simulate(params: ModelParams, env: Environment, initial: CrowdState,
             schedule=None, horizon_steps: int = 1, rng_seed=None,
             record_stride: int = 10) -> SimResult:
    """Run the microscopic dynamics for horizon_steps (or until everyone is
    evacuated) and collect the full result record.

    Aware leaders follow ``schedule`` when given; everyone else runs their
    closed-loop strategy.  The dynamics are deterministic; ``rng_seed`` is
    accepted for interface symmetry with the mean-field runner and ignored.
    """
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    state = initial.copy()
    _apply_capture(env, state, state.time)

    rec = RunRecorder(env, params.s, "micro", params.dt, record_stride,
                      state.total_mass(), horizon_steps)
    n_exits = len(env.exits)

    def _record(step, st):
        af = np.flatnonzero(st.factive)
        al = np.flatnonzero(st.lactive)
        pos = np.concatenate([st.fpos[af], st.lpos[al]], axis=0)
        vel = np.concatenate([st.fvel[af], st.lvel[al]], axis=0)
        mass = np.concatenate([st.fmass[af], st.lmass[al]])
        ids = np.concatenate([af, st.n_followers + al])
        kinds = np.concatenate([np.zeros(len(af), int), np.ones(len(al), int)])
        rec.record(step, st.time, pos, vel, mass,
                   st.evacuated_mass_by_exit(n_exits), st.active_mass(),
                   ids=ids, kinds=kinds)

    _record(0, state)
    evac_step = 0 if state.all_evacuated() else None

    for n in range(1, horizon_steps + 1):
        if evac_step is not None:
            break
        # with no follower left the strategies fall back to pure pursuit
        m_f = followers_center_of_mass(state) if state.factive.any() else None
        controls = _leader_controls(state, schedule, m_f)
        state = euler_step(params, env, state, controls)
        _record(n, state)
        if state.all_evacuated():
            evac_step = n

    return rec.build(evac_step, state)
