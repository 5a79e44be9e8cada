"""Crowd state containers.

Per-agent dataclasses (`FollowerState`, `LeaderState`) are the construction
and inspection API; `CrowdState` stores the same data as contiguous arrays so
the force kernels can run over them directly.  An agent with a non-NaN
``evacuated_at`` is frozen: it exerts no forces and receives no updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .control import LeaderStrategy

__all__ = ["FollowerState", "LeaderState", "CrowdState"]


@dataclass
class FollowerState:
    pos: np.ndarray
    vel: np.ndarray
    mass: float
    evacuated_at: Optional[float] = None

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)
        if self.mass <= 0:
            raise ValueError("follower mass must be > 0")


@dataclass
class LeaderState:
    pos: np.ndarray
    vel: np.ndarray
    mass: float
    aware: bool = False
    strategy: Optional[LeaderStrategy] = None
    evacuated_at: Optional[float] = None

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)
        if self.mass <= 0:
            raise ValueError("leader mass must be > 0")


def _evac_array(agents) -> np.ndarray:
    out = np.full(len(agents), np.nan)
    for i, a in enumerate(agents):
        if a.evacuated_at is not None:
            out[i] = a.evacuated_at
    return out


class CrowdState:
    """Positions, velocities and bookkeeping for followers and leaders.

    Total mass (active plus evacuated) is conserved by construction; the
    integrator only flips agents from active to evacuated.
    """

    def __init__(self, followers: Sequence[FollowerState],
                 leaders: Sequence[LeaderState] = (), time: float = 0.0):
        followers = list(followers)
        leaders = list(leaders)
        self.time = float(time)
        self.fpos = np.array([f.pos for f in followers], dtype=float).reshape(-1, 2)
        self.fvel = np.array([f.vel for f in followers], dtype=float).reshape(-1, 2)
        self.fmass = np.array([f.mass for f in followers], dtype=float)
        self.fevac = _evac_array(followers)
        self.fexit = np.full(len(followers), -1, dtype=np.int64)
        self.lpos = np.array([l.pos for l in leaders], dtype=float).reshape(-1, 2)
        self.lvel = np.array([l.vel for l in leaders], dtype=float).reshape(-1, 2)
        self.lmass = np.array([l.mass for l in leaders], dtype=float)
        self.levac = _evac_array(leaders)
        self.lexit = np.full(len(leaders), -1, dtype=np.int64)
        self.aware = np.array([l.aware for l in leaders], dtype=bool)
        self.strategies = [l.strategy for l in leaders]

    # ---- masks and aggregates -------------------------------------------

    @property
    def n_followers(self) -> int:
        return len(self.fmass)

    @property
    def n_leaders(self) -> int:
        return len(self.lmass)

    @property
    def factive(self) -> np.ndarray:
        return np.isnan(self.fevac)

    @property
    def lactive(self) -> np.ndarray:
        return np.isnan(self.levac)

    def total_mass(self) -> float:
        return float(self.fmass.sum() + self.lmass.sum())

    def active_mass(self) -> float:
        return float(self.fmass[self.factive].sum() + self.lmass[self.lactive].sum())

    def evacuated_mass_by_exit(self, n_exits: int) -> np.ndarray:
        out = np.zeros(n_exits)
        for e in range(n_exits):
            out[e] = self.fmass[self.fexit == e].sum() + self.lmass[self.lexit == e].sum()
        return out

    def all_evacuated(self) -> bool:
        return not (self.factive.any() or self.lactive.any())

    # ---- views ------------------------------------------------------------

    @property
    def followers(self) -> list[FollowerState]:
        return [
            FollowerState(self.fpos[i].copy(), self.fvel[i].copy(), float(self.fmass[i]),
                          None if np.isnan(self.fevac[i]) else float(self.fevac[i]))
            for i in range(self.n_followers)
        ]

    @property
    def leaders(self) -> list[LeaderState]:
        return [
            LeaderState(self.lpos[k].copy(), self.lvel[k].copy(), float(self.lmass[k]),
                        bool(self.aware[k]), self.strategies[k],
                        None if np.isnan(self.levac[k]) else float(self.levac[k]))
            for k in range(self.n_leaders)
        ]

    def copy(self) -> "CrowdState":
        dup = object.__new__(CrowdState)
        dup.time = self.time
        for name in ("fpos", "fvel", "fmass", "fevac", "fexit",
                     "lpos", "lvel", "lmass", "levac", "lexit", "aware"):
            setattr(dup, name, getattr(self, name).copy())
        dup.strategies = list(self.strategies)
        return dup
