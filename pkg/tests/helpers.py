"""Shared builders for the test suite."""

import numpy as np

from crowdevac.env import Environment, Exit, Wall
from crowdevac.meso import MfmcConfig, ParticleEnsemble
from crowdevac.params import ModelParams
from crowdevac.state import CrowdState, FollowerState, LeaderState

FAR_EXIT = Exit((1000.0, 1000.0), 1.0, 0.5)


def open_env():
    """No walls, one exit far away from everything (no visibility effects)."""
    return Environment((FAR_EXIT,))


def env_with_exit(pos=(35.0, 10.0), vis_r=5.0, cap_r=0.5, walls=()):
    return Environment((Exit(np.asarray(pos, dtype=float), vis_r, cap_r),), tuple(walls))


def params_for(n_followers, n_leaders, **overrides):
    """Equal per-agent masses, defaults from the bundled parameter table."""
    total = n_followers + n_leaders
    rho_f = n_followers / total if n_leaders else 1.0
    base = dict(rho_f=rho_f, rho_l=1.0 - rho_f)
    base.update(overrides)
    return ModelParams(**base)


def random_crowd(rng, n_followers, n_leaders, params, box=4.0, min_sep=1e-3):
    """Random agents in [0, box]^2 with a minimum pairwise separation."""
    pts = []
    while len(pts) < n_followers + n_leaders:
        cand = rng.uniform(0.0, box, size=2)
        if all(np.linalg.norm(cand - p) > min_sep for p in pts):
            pts.append(cand)
    pts = np.array(pts)
    vels = rng.normal(0.0, 0.5, size=(n_followers + n_leaders, 2))
    m_f = params.rho_f / n_followers
    followers = [FollowerState(pts[i], vels[i], m_f) for i in range(n_followers)]
    m_l = params.rho_l / n_leaders if n_leaders else 0.0
    leaders = [LeaderState(pts[n_followers + k], vels[n_followers + k], m_l)
               for k in range(n_leaders)]
    return CrowdState(followers, leaders)


def matching_ensemble(state: CrowdState, params) -> ParticleEnsemble:
    """Ensemble whose samples coincide with the crowd's followers."""
    return ParticleEnsemble(state.fpos.copy(), state.fvel.copy(),
                            number_density=params.rho_f)


def equivalence_config(n_samples, params) -> MfmcConfig:
    """Full-batch config whose topological target matches the agent count rule."""
    m = params.rho_f / n_samples
    return MfmcConfig(batch_size=n_samples, rho_top=params.n_top * m)


def leaders_only(state: CrowdState) -> CrowdState:
    return CrowdState([], state.leaders)
