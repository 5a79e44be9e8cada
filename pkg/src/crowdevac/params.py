"""Model constants shared by the microscopic and mean-field dynamics."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["ModelParams"]


@dataclass(frozen=True)
class ModelParams:
    """Force coefficients, kernel parameters and the time step.

    c_s        gain of the speed relaxation toward the characteristic speed
    c_tau      gain of the steering toward a visible exit
    c_r_f      follower-follower repulsion strength
    c_r_l      repulsion strength involving leaders (both directions)
    c_al_f     follower-follower alignment strength
    c_al_l     follower-leader alignment strength
    s2         squared characteristic speed (m^2/s^2)
    r          repulsion radius in meters; also the exponent of the
               leader-side repulsion kernel (the two coincide numerically
               in all bundled scenarios)
    gamma      exponent of the follower-side repulsion kernel
    n_top      topological neighbor count for the alignment ball
    rho_f      total follower mass fraction
    rho_l      total leader mass fraction (rho_f + rho_l = 1; rho_l may be 0
               only for runs without leaders)
    dt         forward-Euler time step in seconds
    """

    c_s: float = 0.5
    c_tau: float = 1.0
    c_r_f: float = 2.0
    c_r_l: float = 1.5
    c_al_f: float = 3.0
    c_al_l: float = 3.0
    s2: float = 0.4
    r: float = 1.0
    gamma: float = 1.0
    n_top: int = 20
    rho_f: float = 1.0
    rho_l: float = 0.0
    dt: float = 0.1

    def __post_init__(self):
        positive = {
            "c_s": self.c_s, "c_tau": self.c_tau, "c_r_f": self.c_r_f,
            "c_r_l": self.c_r_l, "c_al_f": self.c_al_f, "c_al_l": self.c_al_l,
            "s2": self.s2, "r": self.r, "gamma": self.gamma, "dt": self.dt,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be > 0")
        if self.n_top < 1:
            raise ValueError("n_top must be >= 1")
        if not self.rho_f > 0:
            raise ValueError("rho_f must be > 0")
        if self.rho_l < 0:
            raise ValueError("rho_l must be >= 0")
        if self.rho_f + self.rho_l != 1.0:
            raise ValueError("mass fractions must satisfy rho_f + rho_l = 1 exactly")

    @property
    def s(self) -> float:
        """Characteristic speed (m/s)."""
        return self.s2 ** 0.5
