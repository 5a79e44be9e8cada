"""Walking domain: exits with visibility disks, wall obstacles, velocity cut-off.

Exits are capture points surrounded by a visibility disk (inside which agents
perceive the exit and steer toward it) and a smaller capture disk (inside which
an agent counts as evacuated and leaves the dynamics).  Walls are thick
segments, i.e. rectangles described by a centerline and a half-width.  Obstacle
handling is a velocity cut-off: the component of a velocity that would carry an
agent into a wall within one time step is removed, with a tangential nudge to
escape corner deadlocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Exit",
    "Wall",
    "Environment",
    "visibility_indicator",
    "project_velocity",
    "is_evacuated",
]

# Shrink factor for "strictly inside a wall" tests; absorbs round-off from
# boundary sliding without letting real penetrations through.
_INTERIOR_TOL = 1e-9


@dataclass(frozen=True)
class Exit:
    """An exit point with its visibility and capture disks (radii in meters)."""

    position: np.ndarray
    visibility_radius: float
    capture_radius: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.position.shape != (2,):
            raise ValueError("exit position must be a 2-vector")
        if not self.visibility_radius > 0:
            raise ValueError("visibility_radius must be > 0")
        if not self.capture_radius > 0:
            raise ValueError("capture_radius must be > 0")
        if self.capture_radius > self.visibility_radius:
            raise ValueError("capture_radius must not exceed visibility_radius")


@dataclass(frozen=True)
class Wall:
    """A thick segment: rectangle around the centerline from a to b.

    ``thickness`` is the half-width.  Degenerate zero thickness still blocks
    crossings (an effective hair-width is used for the geometry).
    """

    a: np.ndarray
    b: np.ndarray
    thickness: float = 0.3

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if a.shape != (2,) or b.shape != (2,):
            raise ValueError("wall endpoints must be 2-vectors")
        if np.allclose(a, b):
            raise ValueError("wall endpoints must be distinct")
        if self.thickness < 0:
            raise ValueError("thickness must be >= 0")
        length = float(np.linalg.norm(b - a))
        tangent = (b - a) / length
        object.__setattr__(self, "_length", length)
        object.__setattr__(self, "_tangent", tangent)
        object.__setattr__(self, "_normal", np.array([-tangent[1], tangent[0]]))

    @property
    def length(self) -> float:
        return self._length

    @property
    def tangent(self) -> np.ndarray:
        return self._tangent

    @property
    def normal(self) -> np.ndarray:
        return self._normal

    def local(self, p) -> tuple[float, float]:
        """Coordinates of p along the centerline (u) and across it (w)."""
        d = np.asarray(p, dtype=float) - self.a
        return float(d @ self.tangent), float(d @ self.normal)

    def contains(self, p, tol: float = _INTERIOR_TOL) -> bool:
        """True if p lies strictly inside the rectangle, shrunk by tol."""
        u, w = self.local(p)
        th = max(self.thickness, 1e-9)
        return (tol < u < self.length - tol) and (abs(w) < th - tol)


@dataclass(frozen=True)
class Environment:
    """Immutable walking domain: exits, walls and the deadlock escape scale.

    Construction validates that visibility disks are pairwise disjoint and
    that no exit position lies strictly inside a wall.
    """

    exits: tuple[Exit, ...]
    walls: tuple[Wall, ...] = ()
    deadlock_nudge: float = 0.1
    # cached arrays for vectorized queries
    _exit_pos: np.ndarray = field(init=False, repr=False)
    _vis_r: np.ndarray = field(init=False, repr=False)
    _cap_r: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        exits = tuple(self.exits)
        walls = tuple(self.walls)
        object.__setattr__(self, "exits", exits)
        object.__setattr__(self, "walls", walls)
        if not exits:
            raise ValueError("environment needs at least one exit")
        if self.deadlock_nudge < 0:
            raise ValueError("deadlock_nudge must be >= 0")
        for i in range(len(exits)):
            for j in range(i + 1, len(exits)):
                gap = np.linalg.norm(exits[i].position - exits[j].position)
                if gap < exits[i].visibility_radius + exits[j].visibility_radius:
                    raise ValueError(
                        f"visibility disks of exits {i} and {j} overlap; "
                        "they must be pairwise disjoint"
                    )
        for e, ex in enumerate(exits):
            for w, wall in enumerate(walls):
                if wall.contains(ex.position, tol=1e-12):
                    raise ValueError(f"exit {e} lies inside wall {w}")
        object.__setattr__(
            self, "_exit_pos", np.array([e.position for e in exits], dtype=float)
        )
        object.__setattr__(
            self, "_vis_r", np.array([e.visibility_radius for e in exits], dtype=float)
        )
        object.__setattr__(
            self, "_cap_r", np.array([e.capture_radius for e in exits], dtype=float)
        )

    @property
    def exit_positions(self) -> np.ndarray:
        return self._exit_pos

    # ---- vectorized queries over many positions -------------------------

    def visibility_indices(self, pos: np.ndarray) -> np.ndarray:
        """Visible-exit index per row of pos, -1 where no exit is visible.

        Disjointness guarantees at most one disk contains any point.
        """
        pos = np.atleast_2d(pos)
        d = np.linalg.norm(pos[:, None, :] - self._exit_pos[None, :, :], axis=2)
        inside = d < self._vis_r[None, :]
        idx = np.where(inside.any(axis=1), inside.argmax(axis=1), -1)
        return idx.astype(np.int64)

    def capture_indices(self, pos: np.ndarray) -> np.ndarray:
        """Capture-disk index per row of pos, -1 if not captured."""
        pos = np.atleast_2d(pos)
        d = np.linalg.norm(pos[:, None, :] - self._exit_pos[None, :, :], axis=2)
        inside = d < self._cap_r[None, :]
        idx = np.where(inside.any(axis=1), inside.argmax(axis=1), -1)
        return idx.astype(np.int64)

    def wall_violations(self, pos: np.ndarray, tol: float = _INTERIOR_TOL) -> np.ndarray:
        """Boolean mask of positions strictly inside some wall."""
        pos = np.atleast_2d(pos)
        bad = np.zeros(len(pos), dtype=bool)
        for wall in self.walls:
            d = pos - wall.a
            t, n = wall.tangent, wall.normal
            u = d @ t
            w = d @ n
            th = max(wall.thickness, 1e-9)
            bad |= (u > tol) & (u < wall.length - tol) & (np.abs(w) < th - tol)
        return bad

    def project_velocities(self, pos: np.ndarray, vel: np.ndarray, dt: float) -> np.ndarray:
        """Velocity cut-off applied row-wise; see :func:`project_velocity`."""
        if not self.walls:
            return vel.copy()
        pos = np.atleast_2d(pos)
        vel = np.atleast_2d(vel)
        out = vel.copy()
        near = _near_wall_mask(self.walls, pos, vel, dt)
        idx = np.flatnonzero(near)
        if len(idx) == 0:
            return out
        out[idx] = _project_rows(self.walls, pos[idx], out[idx], dt,
                                 self.deadlock_nudge)
        return out


def visibility_indicator(env: Environment, x) -> int | None:
    """Index of the exit whose visibility disk contains x, or None."""
    idx = int(env.visibility_indices(np.asarray(x, dtype=float)[None, :])[0])
    return idx if idx >= 0 else None


def is_evacuated(env: Environment, x) -> bool:
    """True iff x lies inside some exit's capture disk."""
    return int(env.capture_indices(np.asarray(x, dtype=float)[None, :])[0]) >= 0


def project_velocity(env: Environment, x, v, dt: float) -> np.ndarray:
    """Remove from v any component that drives x into a wall within dt seconds.

    For every wall whose boundary the step x -> x + dt*v would cross, the
    velocity component along the crossed face's inward normal is removed.  If
    this leaves a near-zero vector while the agent is blocked by two walls
    (a corner), a tangential escape of magnitude deadlock_nudge * |v| is
    applied along the wall direction pointing away from the corner.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not env.walls:
        return v.copy()
    return _project_rows(env.walls, x[None, :], v[None, :].copy(), dt,
                         env.deadlock_nudge)[0]


# ---- wall-projection internals ------------------------------------------


def _near_wall_mask(walls, pos, vel, dt):
    """Cheap prefilter: agents whose step AABB meets some wall AABB."""
    p1 = pos + dt * vel
    lo = np.minimum(pos, p1)
    hi = np.maximum(pos, p1)
    near = np.zeros(len(pos), dtype=bool)
    for wall in walls:
        th = max(wall.thickness, 1e-9)
        wlo = np.minimum(wall.a, wall.b) - th
        whi = np.maximum(wall.a, wall.b) + th
        near |= (hi[:, 0] >= wlo[0]) & (lo[:, 0] <= whi[0]) & \
                (hi[:, 1] >= wlo[1]) & (lo[:, 1] <= whi[1])
    return near


def _axis_span(c0, dc, lo, hi):
    """Entry/exit step fractions of the open slab (lo, hi), vectorized.

    A zero rate means the agent never enters (empty span) or never leaves
    the slab, depending on where it starts.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t0 = (lo - c0) / dc
        t1 = (hi - c0) / dc
    swap = t0 > t1
    t0s = np.where(swap, t1, t0)
    t1s = np.where(swap, t0, t1)
    still = dc == 0.0
    inside = (c0 > lo) & (c0 < hi)
    t0s = np.where(still, np.where(inside, -np.inf, np.inf), t0s)
    t1s = np.where(still, np.where(inside, np.inf, -np.inf), t1s)
    return t0s, t1s


def _entry_face_rows(wall: Wall, pos, vel, dt):
    """Per row: does the step penetrate the wall, and through which face.

    Returns (hit, g) with g the unit outward normal of the crossed face on
    the agent's side.  Boundary sliding does not count as a hit; only strict
    interior penetration does.
    """
    th = max(wall.thickness, 1e-9)
    L = wall.length
    t_hat, n_hat = wall.tangent, wall.normal
    rel = pos - wall.a
    u0 = rel @ t_hat
    w0 = rel @ n_hat
    du = (vel @ t_hat) * dt
    dw = (vel @ n_hat) * dt

    tol = 1e-12
    tin_u, tout_u = _axis_span(u0, du, tol, L - tol)
    tin_w, tout_w = _axis_span(w0, dw, -th + tol, th - tol)
    t_in = np.maximum(tin_u, tin_w)
    t_out = np.minimum(tout_u, tout_w)
    hit = (t_in < t_out) & (t_in < 1.0) & (t_out > 0.0)

    # entry axis: whichever slab is entered last; on a contact start, the
    # face the start point is closest to
    d_u = np.minimum(np.abs(u0), np.abs(L - u0))
    d_w = th - np.abs(w0)
    axis_w = np.where(t_in > 0.0, tin_w > tin_u, d_w <= d_u)

    side_w = np.where(w0 > 0, 1.0,
                      np.where(w0 < 0, -1.0, np.where(dw > 0, -1.0, 1.0)))
    side_u = np.where(u0 < L / 2, -1.0, 1.0)
    g = np.where(axis_w[:, None], side_w[:, None] * n_hat, side_u[:, None] * t_hat)
    return hit, g


def _corner_escape(w1: Wall, w2: Wall, x, v):
    """Unit tangential direction out of the corner formed by two walls."""
    t1, t2 = w1.tangent, w2.tangent
    det = t1[0] * t2[1] - t1[1] * t2[0]
    if abs(det) < 1e-12:
        # parallel walls: keep sliding in the direction of travel
        s = float(v @ t1)
        return t1 if s >= 0 else -t1
    # centerline intersection point
    rhs = w2.a - w1.a
    s1 = (rhs[0] * t2[1] - rhs[1] * t2[0]) / det
    corner = w1.a + s1 * t1
    away = x - corner
    candidates = (t1, -t1, t2, -t2)
    scores = [float(c @ away) for c in candidates]
    if max(scores) > 1e-12:
        return candidates[int(np.argmax(scores))]
    # agent sits exactly on the corner: retreat against the motion
    scores = [float(-(c @ v)) for c in candidates]
    return candidates[int(np.argmax(scores))]


def _project_rows(walls, pos, vel, dt, nudge):
    """Sequential per-wall cut-off, vectorized across agent rows.

    Each wall sees velocities already projected by the previous walls; two
    sweeps settle corner interactions, and agents left with a null velocity
    after hitting two distinct walls get the tangential corner escape.
    """
    out = vel.copy()
    speed0 = np.sqrt((vel ** 2).sum(axis=1))
    hit_matrix = np.zeros((len(pos), len(walls)), dtype=bool)
    for _ in range(2):
        changed = False
        for wi, wall in enumerate(walls):
            hit, g = _entry_face_rows(wall, pos, out, dt)
            inward = (out * g).sum(axis=1)
            apply = hit & (inward < 0.0)
            if apply.any():
                out[apply] -= inward[apply, None] * g[apply]
                hit_matrix[apply, wi] = True
                changed = True
        if not changed:
            break
    stuck = (hit_matrix.sum(axis=1) >= 2) & (speed0 > 0.0) \
        & (np.sqrt((out ** 2).sum(axis=1)) <= 1e-12 * speed0)
    for i in np.flatnonzero(stuck):
        w1, w2 = np.flatnonzero(hit_matrix[i])[:2]
        d = _corner_escape(walls[w1], walls[w2], pos[i], vel[i])
        out[i] = nudge * speed0[i] * d
    return out
