"""Leader strategies: go-to-target closed loops and optimized control schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "WaypointPlan",
    "LeaderStrategy",
    "ControlSchedule",
    "go_to_target_control",
    "followers_center_of_mass",
    "schedule_to_control",
]


@dataclass(frozen=True)
class WaypointPlan:
    """Ordered waypoints, each active until its switch time; the last entry is
    the destination exit and stays active forever (until_time = +inf)."""

    waypoints: tuple[tuple[np.ndarray, float], ...]

    def __post_init__(self):
        wps = tuple((np.asarray(p, dtype=float), float(t)) for p, t in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        if not wps:
            raise ValueError("waypoint plan needs at least the destination exit")
        times = [t for _, t in wps]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("waypoint switch times must be strictly increasing")
        if not math.isinf(times[-1]):
            raise ValueError("last waypoint (the exit) must have until_time = +inf")

    def target(self, t: float) -> np.ndarray:
        for pos, until in self.waypoints:
            if t < until:
                return pos
        return self.waypoints[-1][0]


@dataclass(frozen=True)
class LeaderStrategy:
    """Closed-loop leader behavior.

    ``beta`` blends pure pursuit of the current waypoint (beta = 1) with
    attraction to the followers' center of mass (beta = 0).  ``plan`` may be
    None for passive leaders that apply no control at all.
    """

    aware: bool = False
    beta: float = 1.0
    plan: Optional[WaypointPlan] = None
    control_speed: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not self.control_speed > 0:
            raise ValueError("control_speed must be > 0")


def _unit(d: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(d))
    return d / n if n > 0 else np.zeros(2)


def go_to_target_control(strategy: LeaderStrategy, y, m_f, t: float) -> np.ndarray:
    """Blend of the unit direction to the active waypoint and the pull toward
    the followers' center of mass.

    With no active followers left (m_f is None) the blend degenerates to pure
    target pursuit so the leader still evacuates.  Passive strategies (no
    plan) return zero control.
    """
    if strategy.plan is None:
        return np.zeros(2)
    y = np.asarray(y, dtype=float)
    target = strategy.plan.target(t)
    pursuit = _unit(target - y)
    if m_f is None:
        return pursuit
    m_f = np.asarray(m_f, dtype=float)
    return strategy.beta * pursuit + (1.0 - strategy.beta) * (m_f - y)


def followers_center_of_mass(state) -> np.ndarray:
    """Mass-weighted mean position of the active followers."""
    act = state.factive
    if not act.any():
        raise ValueError("no active followers")
    m = state.fmass[act]
    return (m[:, None] * state.fpos[act]).sum(axis=0) / m.sum()


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant controls for the optimized leaders.

    ``switch_times`` are strictly increasing and shared by all optimized
    leaders; ``points`` maps a leader index to its control points, one per
    switch time; ``start`` holds that leader's position at t = 0 so the first
    segment is defined.  On [t_m, t_{m+1}) the control is the unit direction
    from P(t_m) to P(t_{m+1}) scaled by ``control_speed``; a degenerate
    segment (equal points) means hold position (zero control).
    """

    switch_times: np.ndarray
    points: dict[int, np.ndarray]
    start: dict[int, np.ndarray]
    control_speed: float = 1.0

    def __post_init__(self):
        st = np.asarray(self.switch_times, dtype=float)
        object.__setattr__(self, "switch_times", st)
        if st.ndim != 1 or len(st) < 1:
            raise ValueError("need at least one switch time")
        if np.any(np.diff(st) <= 0):
            raise ValueError("switch times must be strictly increasing")
        pts = {int(k): np.asarray(v, dtype=float).reshape(len(st), 2)
               for k, v in self.points.items()}
        object.__setattr__(self, "points", pts)
        object.__setattr__(
            self, "start",
            {int(k): np.asarray(v, dtype=float).reshape(2) for k, v in self.start.items()},
        )
        if not self.control_speed > 0:
            raise ValueError("control_speed must be > 0")
        for k in pts:
            if k not in self.start:
                raise ValueError(f"missing start position for leader {k}")

    @property
    def leader_indices(self) -> list[int]:
        return sorted(self.points)

    def replace_points(self, points: dict[int, np.ndarray]) -> "ControlSchedule":
        return ControlSchedule(self.switch_times, points, self.start, self.control_speed)


def schedule_to_control(schedule: ControlSchedule, k: int, t: float) -> np.ndarray:
    """Scheduled control for leader k at time t (right-continuous in t)."""
    pts = schedule.points[k]
    times = schedule.switch_times
    # segment m covers [t_{m-1}, t_m) with t_0 = 0 and node points
    # P_0 = start, P_m = pts[m-1]
    m = int(np.searchsorted(times, t, side="right"))
    if m >= len(times):
        m = len(times) - 1
    p_from = schedule.start[k] if m == 0 else pts[m - 1]
    p_to = pts[m]
    seg = p_to - p_from
    n = float(np.linalg.norm(seg))
    if n == 0.0:
        return np.zeros(2)
    return schedule.control_speed * seg / n
