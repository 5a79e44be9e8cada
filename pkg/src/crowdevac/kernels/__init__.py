"""Hot interaction kernels with a compiled core and a pure-numpy fallback.

The compiled extension (`_core`, Cython) is selected at import when available;
otherwise the numpy fallback (`_fallback`) is used.  Set the environment
variable ``CROWDEVAC_BACKEND=python`` to force the fallback, or call
:func:`use_backend` (mainly for tests and the benchmark).

Contract shared by both backends:

``follower_accelerations(...)``
    Right-hand side of the follower velocity equation for every active
    follower: speed relaxation plus exit steering, metrical repulsion from
    active followers and leaders, and topological alignment (suppressed
    inside visibility areas).  Rows of inactive followers are zero.

``leader_velocities(...)``
    First-order leader velocities: control plus metrical repulsion from
    active followers and leaders (kernel exponent ``zeta``).

``mfmc_velocities(...)``
    One velocity update of the batch-subsampled mean-field scheme: per active
    sample, the follower interaction integrals are estimated over the drawn
    batch while leader terms are summed exactly.  Returns the new velocities.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _core
    _HAVE_CORE = True
except ImportError:
    _core = None
    _HAVE_CORE = False

_impl = _fallback if (os.environ.get("CROWDEVAC_BACKEND") == "python" or not _HAVE_CORE) else _core

__all__ = [
    "backend_name",
    "available_backends",
    "use_backend",
    "get_backend",
    "follower_accelerations",
    "leader_velocities",
    "mfmc_velocities",
    "draw_batches",
    "draw_batches_with",
    "subsample",
]


def backend_name() -> str:
    return _impl.BACKEND_NAME


def available_backends() -> list[str]:
    return ["cython", "python"] if _HAVE_CORE else ["python"]


def get_backend(name: str):
    if name == "python":
        return _fallback
    if name == "cython":
        if not _HAVE_CORE:
            raise RuntimeError("compiled kernel extension is not available")
        return _core
    raise ValueError(f"unknown backend {name!r}")


def use_backend(name: str) -> None:
    global _impl
    _impl = get_backend(name)


def follower_accelerations(*args, **kwargs):
    return _impl.follower_accelerations(*args, **kwargs)


def leader_velocities(*args, **kwargs):
    return _impl.leader_velocities(*args, **kwargs)


def mfmc_velocities(*args, **kwargs):
    return _impl.mfmc_velocities(*args, **kwargs)


# ---- batch drawing (shared by both backends) -----------------------------


def subsample(rng: np.random.Generator, n_total: int, m: int) -> np.ndarray:
    """m distinct indices drawn uniformly over size-m subsets of range(n_total).

    Partial Fisher-Yates; with m = n_total the result is a full permutation.
    """
    if m > n_total:
        raise ValueError(f"cannot draw {m} distinct indices out of {n_total}")
    if m < 1:
        raise ValueError("subsample size must be >= 1")
    idx = np.arange(n_total, dtype=np.int64)
    for t in range(m):
        j = t + int(rng.integers(0, n_total - t))
        idx[t], idx[j] = idx[j], idx[t]
    return idx[:m]


def draw_batches_with(rng: np.random.Generator, act_idx: np.ndarray, m: int) -> np.ndarray:
    """One batch of sample ids per active sample, drawn from rng.

    Row i belongs to sample act_idx[i]; batches are drawn among the active
    samples, without repetition, via a vectorized partial Fisher-Yates
    shuffle.  The whole matrix is drawn up front, so per-sample results do
    not depend on any execution order within the step.
    """
    n = len(act_idx)
    m_eff = min(m, n)
    base = np.tile(np.arange(n, dtype=np.int64), (n, 1))
    rows = np.arange(n)
    for t in range(m_eff):
        j = t + rng.integers(0, n - t, size=n)
        picked = base[rows, j].copy()
        base[rows, j] = base[rows, t]
        base[rows, t] = picked
    return act_idx[base[:, :m_eff]]


def draw_batches(seed, step: int, act_idx: np.ndarray, m: int) -> np.ndarray:
    """Per-step batches from a generator derived from (seed, step)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step,)))
    return draw_batches_with(rng, act_idx, m)
