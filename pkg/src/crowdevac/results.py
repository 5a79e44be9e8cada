"""Simulation results: per-step series, trajectories and CSV emission.

All CSV output is written with shortest round-trip float formatting, so two
runs producing bit-identical numbers produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = ["SimResult", "RunRecorder", "fmt"]


def fmt(x) -> str:
    """Deterministic text form of a scalar for CSV output."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class SimResult:
    """Everything a run records.

    Scalar series have one row per simulated step (including the initial
    state); trajectories are thinned by the record stride.  ``occupancy_*``
    and ``sqdev_*`` aggregate the active agents inside each exit's visibility
    area: counts, masses, and the (plain / mass-weighted) sums of
    ``(speed - s)**2`` used by the congestion diagnostics.
    """

    scale: str
    dt: float
    times: np.ndarray
    occupancy_count: np.ndarray
    occupancy_mass: np.ndarray
    sqdev_count: np.ndarray
    sqdev_mass: np.ndarray
    evac_mass: np.ndarray
    active_mass: np.ndarray
    mean_speed: np.ndarray
    traj_step: np.ndarray
    traj_id: np.ndarray
    traj_kind: np.ndarray
    traj_xy: np.ndarray
    evac_step: Optional[int]
    evac_time: Optional[float]
    total_mass0: float
    mass_error_max: float
    wall_violations: int
    record_stride: int
    horizon_steps: int
    final_state: object = None
    densities: dict = field(default_factory=dict)

    @property
    def n_exits(self) -> int:
        return self.occupancy_mass.shape[1]

    def index_at_time(self, t: float) -> int:
        """Row index of the last recorded step with time <= t."""
        i = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        return max(i, 0)

    def evacuated_fraction(self, t: Optional[float] = None) -> float:
        i = self.index_at_time(t) if t is not None else len(self.times) - 1
        return float(self.evac_mass[i].sum() / self.total_mass0)

    # ---- writers ----------------------------------------------------------

    def write_exits_csv(self, path) -> None:
        """time, per-exit occupancy, per-exit cumulative evacuated mass, mean speed.

        Occupancy is an agent count at the microscopic scale and a mass at the
        mesoscopic scale.
        """
        ne = self.n_exits
        occ = self.occupancy_count if self.scale == "micro" else self.occupancy_mass
        header = ["time"] + [f"occ_{e + 1}" for e in range(ne)] \
            + [f"evac_{e + 1}" for e in range(ne)] + ["mean_speed"]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(len(self.times)):
                row = [fmt(self.times[i])]
                row += [fmt(occ[i, e]) for e in range(ne)]
                row += [fmt(self.evac_mass[i, e]) for e in range(ne)]
                row.append(fmt(self.mean_speed[i]))
                fh.write(",".join(row) + "\n")

    def write_series_csv(self, path) -> None:
        """Full per-step aggregates (input of the congestion metrics)."""
        ne = self.n_exits
        header = ["time", "active_mass", "mean_speed"]
        for name in ("occ_count", "occ_mass", "sqdev_count", "sqdev_mass", "evac_mass"):
            header += [f"{name}_{e + 1}" for e in range(ne)]
        arrays = (self.occupancy_count, self.occupancy_mass,
                  self.sqdev_count, self.sqdev_mass, self.evac_mass)
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(len(self.times)):
                row = [fmt(self.times[i]), fmt(self.active_mass[i]), fmt(self.mean_speed[i])]
                for arr in arrays:
                    row += [fmt(arr[i, e]) for e in range(ne)]
                fh.write(",".join(row) + "\n")

    def write_trajectory_csv(self, path) -> None:
        kind_label = {0: "follower" if self.scale == "micro" else "sample", 1: "leader"}
        with open(path, "w") as fh:
            fh.write("step,agent_id,kind,x,y\n")
            for i in range(len(self.traj_step)):
                fh.write(f"{self.traj_step[i]},{self.traj_id[i]},"
                         f"{kind_label[int(self.traj_kind[i])]},"
                         f"{fmt(self.traj_xy[i, 0])},{fmt(self.traj_xy[i, 1])}\n")


class RunRecorder:
    """Accumulates the per-step series during a simulation run."""

    def __init__(self, env, s_char: float, scale: str, dt: float,
                 record_stride: int, total_mass0: float, horizon_steps: int):
        self.env = env
        self.s = s_char
        self.scale = scale
        self.dt = dt
        self.stride = max(int(record_stride), 1)
        self.total_mass0 = total_mass0
        self.horizon_steps = horizon_steps
        ne = len(env.exits)
        self._rows = {name: [] for name in (
            "time", "occ_count", "occ_mass", "sqdev_count", "sqdev_mass",
            "evac_mass", "active_mass", "mean_speed")}
        self._ne = ne
        self._traj = []
        self.mass_error_max = 0.0
        self.wall_violations = 0

    def record(self, step: int, time: float, pos, vel, mass,
               evac_mass_by_exit, active_mass: float,
               ids=None, kinds=None) -> None:
        """Record one step; pos/vel/mass cover the active agents only."""
        ne = self._ne
        pos = np.asarray(pos).reshape(-1, 2)
        vel = np.asarray(vel).reshape(-1, 2)
        mass = np.asarray(mass)
        if len(pos):
            vis = self.env.visibility_indices(pos)
            speed = np.sqrt((vel ** 2).sum(axis=1))
            dev = (speed - self.s) ** 2
            inside = vis >= 0
            occ_c = np.bincount(vis[inside], minlength=ne).astype(float)
            occ_m = np.bincount(vis[inside], weights=mass[inside],
                                minlength=ne).astype(float)
            sq_c = np.bincount(vis[inside], weights=dev[inside],
                               minlength=ne).astype(float)
            sq_m = np.bincount(vis[inside], weights=(mass * dev)[inside],
                               minlength=ne).astype(float)
            mean_speed = float(speed.mean())
            self.wall_violations += int(self.env.wall_violations(pos).sum())
        else:
            occ_c = occ_m = sq_c = sq_m = np.zeros(ne)
            mean_speed = 0.0
        self._rows["time"].append(time)
        self._rows["occ_count"].append(occ_c)
        self._rows["occ_mass"].append(occ_m)
        self._rows["sqdev_count"].append(sq_c)
        self._rows["sqdev_mass"].append(sq_m)
        self._rows["evac_mass"].append(np.asarray(evac_mass_by_exit, dtype=float))
        self._rows["active_mass"].append(active_mass)
        self._rows["mean_speed"].append(mean_speed)
        total = active_mass + float(np.sum(evac_mass_by_exit))
        self.mass_error_max = max(self.mass_error_max, abs(total - self.total_mass0))
        if step % self.stride == 0 and ids is not None and len(pos):
            for i in range(len(pos)):
                self._traj.append((step, int(ids[i]), int(kinds[i]),
                                   pos[i, 0], pos[i, 1]))

    def build(self, evac_step, final_state, densities=None) -> SimResult:
        traj = self._traj
        return SimResult(
            scale=self.scale,
            dt=self.dt,
            times=np.array(self._rows["time"]),
            occupancy_count=np.array(self._rows["occ_count"]).reshape(-1, self._ne),
            occupancy_mass=np.array(self._rows["occ_mass"]).reshape(-1, self._ne),
            sqdev_count=np.array(self._rows["sqdev_count"]).reshape(-1, self._ne),
            sqdev_mass=np.array(self._rows["sqdev_mass"]).reshape(-1, self._ne),
            evac_mass=np.array(self._rows["evac_mass"]).reshape(-1, self._ne),
            active_mass=np.array(self._rows["active_mass"]),
            mean_speed=np.array(self._rows["mean_speed"]),
            traj_step=np.array([r[0] for r in traj], dtype=np.int64),
            traj_id=np.array([r[1] for r in traj], dtype=np.int64),
            traj_kind=np.array([r[2] for r in traj], dtype=np.int64),
            traj_xy=np.array([[r[3], r[4]] for r in traj]).reshape(-1, 2),
            evac_step=evac_step,
            evac_time=None if evac_step is None else float(self._rows["time"][evac_step]),
            total_mass0=self.total_mass0,
            mass_error_max=self.mass_error_max,
            wall_violations=self.wall_violations,
            record_stride=self.stride,
            horizon_steps=self.horizon_steps,
            final_state=final_state,
            densities=densities or {},
        )
