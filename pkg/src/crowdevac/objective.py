"""Evacuation cost functionals and congestion diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .results import SimResult, fmt

__all__ = [
    "ObjectiveSpec",
    "CongestionReport",
    "evacuation_time",
    "residual_mass",
    "mass_split_cost",
    "evaluate_objective",
    "congestion_metrics",
]

KINDS = ("min_time", "residual_mass", "mass_split")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which functional to minimize, over which horizon.

    ``penalty_time`` is what min_time returns when evacuation is incomplete
    at the horizon; the default (horizon plus one step) makes every
    incomplete run strictly worse than any complete one.
    """

    kind: str = "min_time"
    horizon_T: float = 100.0
    desired_masses: Optional[tuple] = None
    penalty_time: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"objective kind must be one of {KINDS}")
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be > 0")
        if self.desired_masses is not None:
            des = tuple(float(v) for v in self.desired_masses)
            object.__setattr__(self, "desired_masses", des)
            if any(v < 0 for v in des):
                raise ValueError("desired masses must be >= 0")
            if sum(des) > 1.0 + 1e-12:
                raise ValueError("desired masses must sum to at most 1")
        elif self.kind == "mass_split":
            raise ValueError("mass_split requires desired_masses")


def evacuation_time(result: SimResult, spec: ObjectiveSpec) -> float:
    """First time everyone (followers and leaders) is out; the penalty time
    when that never happens within the horizon."""
    penalty = spec.penalty_time if spec.penalty_time is not None \
        else spec.horizon_T + result.dt
    if result.evac_time is not None and result.evac_time <= spec.horizon_T + 1e-12:
        return float(result.evac_time)
    return float(penalty)


def residual_mass(result: SimResult, spec: ObjectiveSpec) -> float:
    """Mass at the horizon that is neither evacuated nor inside a visibility
    area."""
    i = result.index_at_time(spec.horizon_T)
    return float(result.active_mass[i] - result.occupancy_mass[i].sum())


def mass_split_cost(result: SimResult, spec: ObjectiveSpec) -> float:
    """Squared mismatch between the per-exit evacuated masses at the horizon
    and the desired distribution."""
    if spec.desired_masses is None:
        raise ValueError("mass_split requires desired_masses")
    des = np.asarray(spec.desired_masses, dtype=float)
    if len(des) != result.n_exits:
        raise ValueError("desired_masses length must match the exit count")
    i = result.index_at_time(spec.horizon_T)
    return float(((result.evac_mass[i] - des) ** 2).sum())


def evaluate_objective(result: SimResult, spec: ObjectiveSpec) -> float:
    if spec.kind == "min_time":
        return evacuation_time(result, spec)
    if spec.kind == "residual_mass":
        return residual_mass(result, spec)
    return mass_split_cost(result, spec)


@dataclass
class CongestionReport:
    """Per-area congestion series and its scalar summaries.

    ``cong`` is occupancy times the variance of speeds about the
    characteristic speed (one column per visibility area); ``peak`` is its
    maximum over time, ``m_count`` the maximum occupancy count, ``l_frac``
    the fraction of recorded steps with a nonempty area, and ``m_mass`` the
    maximum in-area mass fraction.
    """

    scale: str
    times: np.ndarray
    cong: np.ndarray
    peak: np.ndarray
    m_count: np.ndarray
    l_frac: np.ndarray
    m_mass: np.ndarray

    def write_csv(self, path) -> None:
        ne = self.cong.shape[1]
        header = [f"cong_{e + 1}" for e in range(ne)] \
            + [f"m_{e + 1}" for e in range(ne)] \
            + [f"l_{e + 1}" for e in range(ne)] \
            + [f"M_{e + 1}" for e in range(ne)]
        row = [fmt(v) for v in self.peak] + [fmt(v) for v in self.m_count] \
            + [fmt(v) for v in self.l_frac] + [fmt(v) for v in self.m_mass]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            fh.write(",".join(row) + "\n")


def congestion_metrics(result: SimResult, env, params) -> CongestionReport:
    """Congestion diagnostics per visibility area.

    Occupancy is a head count at the microscopic scale and a mass at the
    mesoscopic scale; either way the product of occupancy and speed variance
    reduces to the recorded sum of squared speed deviations.
    """
    if result.scale == "micro":
        cong = result.sqdev_count.copy()
        occupied = result.occupancy_count > 0
    else:
        cong = result.sqdev_mass.copy()
        occupied = result.occupancy_mass > 0
    peak = cong.max(axis=0)
    m_count = result.occupancy_count.max(axis=0)
    l_frac = occupied.mean(axis=0)
    m_mass = (result.occupancy_mass / result.total_mass0).max(axis=0)
    return CongestionReport(result.scale, result.times.copy(), cong,
                            peak, m_count, l_frac, m_mass)
