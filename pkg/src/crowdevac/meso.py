"""Mean-field follower density solved by batch-subsampled Monte Carlo.

The follower distribution is carried by ``N_s`` equally weighted samples;
every step, each sample estimates its interaction integrals over a batch of
``M`` particles drawn uniformly without repetition, while leader terms are
summed exactly (leaders stay microscopic).  With ``M = N_s`` the scheme
reduces to the explicit Euler step of the full sample system, which is the
main correctness oracle used by the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .control import go_to_target_control, schedule_to_control
from .env import Environment
from .kernels import subsample
from .micro import repulsion_kernel
from .params import ModelParams
from .results import RunRecorder, SimResult
from .state import CrowdState, LeaderState

__all__ = [
    "ParticleEnsemble",
    "MfmcConfig",
    "subsample",
    "hat_repulsion",
    "hat_alignment",
    "topological_radius",
    "mfmc_step",
    "simulate_meso",
    "DensityGrid",
    "kde_density",
    "write_density_grid",
    "read_density_grid",
]

_TIE_TOL = 1e-12


class ParticleEnsemble:
    """Samples of the follower phase-space density.

    Each sample carries the fixed weight ``number_density / count``; samples
    entering a capture disk are frozen, so the active mass is always the
    active sample count times the weight.
    """

    def __init__(self, pos, vel, number_density: float = 1.0, time: float = 0.0):
        self.pos = np.array(pos, dtype=float).reshape(-1, 2)
        self.vel = np.array(vel, dtype=float).reshape(-1, 2)
        if len(self.pos) != len(self.vel):
            raise ValueError("positions and velocities must pair up")
        if len(self.pos) < 1:
            raise ValueError("ensemble needs at least one sample")
        if not number_density > 0:
            raise ValueError("number_density must be > 0")
        self.number_density = float(number_density)
        self.time = float(time)
        self.evacuated_at = np.full(len(self.pos), np.nan)
        self.evac_exit = np.full(len(self.pos), -1, dtype=np.int64)

    @property
    def count(self) -> int:
        return len(self.pos)

    @property
    def weight(self) -> float:
        return self.number_density / self.count

    @property
    def active(self) -> np.ndarray:
        return np.isnan(self.evacuated_at)

    def active_mass(self) -> float:
        return int(self.active.sum()) * self.weight

    def evacuated_mass_by_exit(self, n_exits: int) -> np.ndarray:
        out = np.zeros(n_exits)
        for e in range(n_exits):
            out[e] = int((self.evac_exit == e).sum()) * self.weight
        return out

    def copy(self) -> "ParticleEnsemble":
        dup = object.__new__(ParticleEnsemble)
        dup.pos = self.pos.copy()
        dup.vel = self.vel.copy()
        dup.number_density = self.number_density
        dup.time = self.time
        dup.evacuated_at = self.evacuated_at.copy()
        dup.evac_exit = self.evac_exit.copy()
        return dup


@dataclass(frozen=True)
class MfmcConfig:
    """Batch size, topological mass target and the density-output bandwidth."""

    batch_size: int
    rho_top: float
    bandwidth: float = 0.4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.rho_top > 0:
            raise ValueError("rho_top must be > 0")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")


def _leader_arrays(leaders):
    """Accept either a CrowdState (its leader block) or LeaderState list."""
    if isinstance(leaders, CrowdState):
        return leaders
    return CrowdState([], list(leaders))


def hat_repulsion(ensemble: ParticleEnsemble, leaders, i: int, batch,
                  params: ModelParams):
    """Batch-averaged repulsion strengths and weighted centroids around
    sample i: (R_f, X_f, R_l, Y_l).

    When a strength is zero the centroid defaults to the sample's own
    position, so the force term R*(X - x) is the zero vector.
    """
    lead = _leader_arrays(leaders)
    x = ensemble.pos[i]
    batch = np.asarray(batch, dtype=np.int64)
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    m = len(batch)
    rho_f = ensemble.active_mass()

    w = np.array([repulsion_kernel(x, ensemble.pos[j], params.gamma, params.r)
                  for j in batch])
    coef = params.c_r_f * rho_f / m
    r_f = coef * w.sum()
    x_f = coef * (w[:, None] * ensemble.pos[batch]).sum(axis=0) / r_f if r_f > 0 \
        else x.copy()

    al = np.flatnonzero(lead.lactive)
    wl = np.array([repulsion_kernel(x, lead.lpos[k], params.gamma, params.r)
                   for k in al])
    ml = lead.lmass[al]
    r_l = params.c_r_l * float((ml * wl).sum()) if len(al) else 0.0
    y_l = params.c_r_l * ((ml * wl)[:, None] * lead.lpos[al]).sum(axis=0) / r_l \
        if r_l > 0 else x.copy()
    return r_f, np.asarray(x_f).reshape(2), r_l, np.asarray(y_l).reshape(2)


def hat_alignment(ensemble: ParticleEnsemble, leaders, i: int, batch,
                  params: ModelParams, r_star: float):
    """Batch-averaged alignment strengths and velocity centroids over the
    topological ball of radius r_star: (A_f, V_f, A_l, W_l)."""
    if r_star < 0:
        raise ValueError("r_star must be >= 0")
    lead = _leader_arrays(leaders)
    x = ensemble.pos[i]
    batch = np.asarray(batch, dtype=np.int64)
    m = len(batch)
    rho_f = ensemble.active_mass()

    d = np.sqrt(((ensemble.pos[batch] - x) ** 2).sum(axis=1))
    chi = (d <= r_star).astype(float)
    coef = params.c_al_f * rho_f / m
    a_f = coef * chi.sum()
    v_f = coef * (chi[:, None] * ensemble.vel[batch]).sum(axis=0) / a_f if a_f > 0 \
        else np.zeros(2)

    al = np.flatnonzero(lead.lactive)
    dl = np.sqrt(((lead.lpos[al] - x) ** 2).sum(axis=1))
    chil = (dl <= r_star).astype(float)
    ml = lead.lmass[al]
    a_l = params.c_al_l * float((ml * chil).sum()) if len(al) else 0.0
    w_l = params.c_al_l * ((ml * chil)[:, None] * lead.lvel[al]).sum(axis=0) / a_l \
        if a_l > 0 else np.zeros(2)
    return a_f, v_f, a_l, w_l


def topological_radius(ensemble: ParticleEnsemble, leaders, x, batch,
                       rho_top: float, params: ModelParams = None) -> float:
    """Smallest radius whose ball around x holds at least rho_top of mass,
    counting batch particles at the batch weight and leaders at their mass."""
    lead = _leader_arrays(leaders)
    x = np.asarray(x, dtype=float)
    batch = np.asarray(batch, dtype=np.int64)
    m = len(batch)
    w_batch = ensemble.active_mass() / m
    al = np.flatnonzero(lead.lactive)

    d = np.concatenate([
        np.sqrt(((ensemble.pos[batch] - x) ** 2).sum(axis=1)),
        np.sqrt(((lead.lpos[al] - x) ** 2).sum(axis=1)),
    ])
    weights = np.concatenate([np.full(m, w_batch), lead.lmass[al]])
    total = float(weights.sum())
    if total < rho_top - _TIE_TOL * max(1.0, rho_top):
        raise ValueError("available mass is below the topological target")
    order = np.argsort(d, kind="stable")
    cum = np.cumsum(weights[order])
    target = rho_top - _TIE_TOL * max(1.0, rho_top)
    k = int(np.argmax(cum >= target))
    return float(d[order][k])


def mfmc_step(ensemble: ParticleEnsemble, leaders, config: MfmcConfig,
              params: ModelParams, env: Environment,
              rng: np.random.Generator, controls=None):
    """One step of the batch-subsampled scheme.

    Per active sample: draw a batch, estimate the repulsion and topological
    alignment over it (leader terms exact), update the velocity, project it
    against obstacles, and advance the position with the new velocity.
    Leaders move by their first-order law with the follower integral taken
    over all active samples.  Returns (ensemble, leaders) advanced by dt.
    """
    lead = _leader_arrays(leaders)
    ens = ensemble.copy()
    new_lead = lead.copy()
    dt = params.dt

    act_idx = np.flatnonzero(ens.active)
    lact8 = lead.lactive.astype(np.uint8)
    if len(act_idx):
        m_eff = min(config.batch_size, len(act_idx))
        batches = kernels.draw_batches_with(rng, act_idx, m_eff)
        vis = env.visibility_indices(ens.pos[act_idx])
        rho_f_active = len(act_idx) * ens.weight
        vnew = kernels.mfmc_velocities(
            ens.pos, ens.vel, act_idx, batches,
            lead.lpos, lead.lvel, lead.lmass, lact8,
            vis, env.exit_positions, dt,
            params.c_s, params.s2, params.c_tau, params.c_r_f, params.c_r_l,
            params.c_al_f, params.c_al_l, params.gamma, params.r,
            config.rho_top, rho_f_active)
        vnew = env.project_velocities(ens.pos[act_idx], vnew, dt)
        ens.vel[act_idx] = vnew
        ens.pos[act_idx] = ens.pos[act_idx] + dt * vnew

    if lead.n_leaders:
        if controls is None:
            controls = np.zeros((lead.n_leaders, 2))
        # leader dynamics see the pre-step follower density
        sample_mass = np.full(ensemble.count, ensemble.weight)
        w = kernels.leader_velocities(
            lead.lpos, lead.lvel, lead.lmass, lact8,
            ensemble.pos, sample_mass, ensemble.active.astype(np.uint8),
            np.asarray(controls, dtype=float).reshape(-1, 2),
            params.c_r_l, params.r, params.r)
        lact = lead.lactive
        if lact.any():
            wproj = env.project_velocities(lead.lpos, w, dt)
            new_lead.lvel[lact] = wproj[lact]
            new_lead.lpos[lact] = lead.lpos[lact] + dt * wproj[lact]

    ens.time = ensemble.time + dt
    new_lead.time = ens.time

    cap = env.capture_indices(ens.pos[act_idx]) if len(act_idx) else np.zeros(0, np.int64)
    hit = cap >= 0
    ens.evacuated_at[act_idx[hit]] = ens.time
    ens.evac_exit[act_idx[hit]] = cap[hit]
    lact = np.flatnonzero(new_lead.lactive)
    if len(lact):
        cap = env.capture_indices(new_lead.lpos[lact])
        hit = cap >= 0
        new_lead.levac[lact[hit]] = ens.time
        new_lead.lexit[lact[hit]] = cap[hit]
    return ens, new_lead


def _sample_center_of_mass(ens: ParticleEnsemble) -> Optional[np.ndarray]:
    act = ens.active
    if not act.any():
        return None
    return ens.pos[act].mean(axis=0)


def simulate_meso(params: ModelParams, env: Environment,
                  ensemble: ParticleEnsemble, leaders, config: MfmcConfig,
                  schedule=None, horizon_steps: int = 1, rng_seed=0,
                  record_stride: int = 10, density_grid=None,
                  density_stride: int = 0) -> SimResult:
    """Run the mean-field dynamics; mirrors the microscopic runner.

    Per-step batch draws come from a generator seeded by (rng_seed, step),
    so results do not depend on how earlier steps were scheduled.  When a
    ``density_grid`` is given and ``density_stride`` > 0, reconstructed
    density fields are stored at that stride (and at the final step).
    """
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    ens = ensemble.copy()
    lead = _leader_arrays(leaders).copy()
    n_exits = len(env.exits)

    # initial capture sweep
    act = np.flatnonzero(ens.active)
    cap = env.capture_indices(ens.pos[act]) if len(act) else np.zeros(0, np.int64)
    hit = cap >= 0
    ens.evacuated_at[act[hit]] = ens.time
    ens.evac_exit[act[hit]] = cap[hit]
    lact = np.flatnonzero(lead.lactive)
    if len(lact):
        cap = env.capture_indices(lead.lpos[lact])
        hit = cap >= 0
        lead.levac[lact[hit]] = ens.time
        lead.lexit[lact[hit]] = cap[hit]

    total0 = ens.number_density + float(lead.lmass.sum())
    rec = RunRecorder(env, params.s, "meso", params.dt, record_stride,
                      total0, horizon_steps)
    densities = {}

    def _record(step):
        ai = np.flatnonzero(ens.active)
        al = np.flatnonzero(lead.lactive)
        pos = np.concatenate([ens.pos[ai], lead.lpos[al]], axis=0)
        vel = np.concatenate([ens.vel[ai], lead.lvel[al]], axis=0)
        mass = np.concatenate([np.full(len(ai), ens.weight), lead.lmass[al]])
        evac = ens.evacuated_mass_by_exit(n_exits) + lead.evacuated_mass_by_exit(n_exits)
        active_mass = ens.active_mass() + float(lead.lmass[al].sum())
        ids = np.concatenate([ai, ens.count + al])
        kinds = np.concatenate([np.zeros(len(ai), int), np.ones(len(al), int)])
        rec.record(step, ens.time, pos, vel, mass, evac, active_mass,
                   ids=ids, kinds=kinds)
        if density_grid is not None and density_stride > 0 and step % density_stride == 0:
            densities[step] = kde_density(ens, density_grid, config.bandwidth)

    def _all_evacuated():
        return not (ens.active.any() or lead.lactive.any())

    _record(0)
    evac_step = 0 if _all_evacuated() else None

    for n in range(1, horizon_steps + 1):
        if evac_step is not None:
            break
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=rng_seed, spawn_key=(n,)))
        m_f = _sample_center_of_mass(ens)
        controls = np.zeros((lead.n_leaders, 2))
        for k in range(lead.n_leaders):
            if not lead.lactive[k]:
                continue
            if schedule is not None and lead.aware[k] and k in schedule.points:
                controls[k] = schedule_to_control(schedule, k, ens.time)
            elif lead.strategies[k] is not None:
                controls[k] = go_to_target_control(
                    lead.strategies[k], lead.lpos[k], m_f, ens.time)
        ens, lead = mfmc_step(ens, lead, config, params, env, rng, controls)
        _record(n)
        if _all_evacuated():
            evac_step = n

    if density_grid is not None and density_stride > 0:
        last = len(rec._rows["time"]) - 1
        if last not in densities:
            densities[last] = kde_density(ens, density_grid, config.bandwidth)

    return rec.build(evac_step, (ens, lead), densities)


# ---- density reconstruction ----------------------------------------------


@dataclass(frozen=True)
class DensityGrid:
    """Regular lattice: origin of the first node, spacing, and node counts."""

    origin: tuple[float, float]
    spacing: tuple[float, float]
    nx: int
    ny: int

    def nodes(self):
        xs = self.origin[0] + self.spacing[0] * np.arange(self.nx)
        ys = self.origin[1] + self.spacing[1] * np.arange(self.ny)
        return xs, ys


def kde_density(ensemble: ParticleEnsemble, grid: DensityGrid,
                bandwidth: float) -> np.ndarray:
    """Gaussian-kernel density of the active samples on the grid (ny, nx)."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be > 0")
    xs, ys = grid.nodes()
    out = np.zeros((grid.ny, grid.nx))
    act = np.flatnonzero(ensemble.active)
    if len(act) == 0:
        return out
    h2 = bandwidth * bandwidth
    norm = ensemble.weight / (2.0 * math.pi * h2)
    for start in range(0, len(act), 256):
        chunk = act[start:start + 256]
        dx2 = (xs[None, :] - ensemble.pos[chunk, 0][:, None]) ** 2
        dy2 = (ys[None, :] - ensemble.pos[chunk, 1][:, None]) ** 2
        out += norm * np.einsum(
            "sy,sx->yx", np.exp(-dy2 / (2.0 * h2)), np.exp(-dx2 / (2.0 * h2)))
    return out


def write_density_grid(path, grid: DensityGrid, values: np.ndarray) -> None:
    """Plain-text matrix with an origin/spacing/dims header."""
    header = (f"origin {grid.origin[0]!r} {grid.origin[1]!r}\n"
              f"spacing {grid.spacing[0]!r} {grid.spacing[1]!r}\n"
              f"dims {grid.nx} {grid.ny}")
    np.savetxt(path, values, fmt="%.17g", header=header)


def read_density_grid(path):
    with open(path) as fh:
        lines = [fh.readline() for _ in range(3)]
    origin = tuple(float(v) for v in lines[0].split()[2:])
    spacing = tuple(float(v) for v in lines[1].split()[2:])
    nx, ny = (int(v) for v in lines[2].split()[2:])
    values = np.loadtxt(path, skiprows=3).reshape(ny, nx)
    return DensityGrid(origin, spacing, nx, ny), values
