"""Pure-numpy implementations of the hot interaction kernels.

Used when the compiled extension is unavailable (or explicitly requested).
Semantics are identical to `_core`; see `crowdevac.kernels` for the contract.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

# slack for the cumulative-mass comparison in the topological radius, so that
# boundary cases (target an exact multiple of the particle weight) resolve the
# same way regardless of summation round-off
_TIE_TOL = 1e-12


def _rep_weights(d, expo, rrad):
    """exp(-d**expo)/d on 0 < d < rrad, else 0."""
    safe = np.where(d > 0.0, d, 1.0)
    w = np.exp(-safe ** expo) / safe
    return np.where((d > 0.0) & (d < rrad), w, 0.0)


def _self_propulsion(pos, vel, vis_idx, exit_pos, c_s, s2, c_tau):
    speed2 = (vel ** 2).sum(axis=1)
    out = c_s * (s2 - speed2)[:, None] * vel
    seen = vis_idx >= 0
    if seen.any():
        tgt = exit_pos[vis_idx[seen]]
        d = tgt - pos[seen]
        dist = np.sqrt((d ** 2).sum(axis=1))
        unit = d / np.where(dist > 0.0, dist, 1.0)[:, None]
        unit[dist == 0.0] = 0.0
        out[seen] += c_tau * (unit - vel[seen])
    return out


def follower_accelerations(fpos, fvel, fmass, factive, lpos, lvel, lmass, lactive,
                           vis_idx, exit_pos, c_s, s2, c_tau, c_r_f, c_r_l,
                           c_al_f, c_al_l, gamma, rrad, n_top):
    n_f = len(fmass)
    acc = np.zeros((n_f, 2))
    rows = np.flatnonzero(factive)
    if len(rows) == 0:
        return acc

    cols_f = np.flatnonzero(factive)
    cols_l = np.flatnonzero(lactive)
    pos_all = np.concatenate([fpos[cols_f], lpos[cols_l]], axis=0)
    vel_all = np.concatenate([fvel[cols_f], lvel[cols_l]], axis=0)
    mass_all = np.concatenate([fmass[cols_f], lmass[cols_l]])
    rep_c = np.concatenate([np.full(len(cols_f), c_r_f), np.full(len(cols_l), c_r_l)])
    al_c = np.concatenate([np.full(len(cols_f), c_al_f), np.full(len(cols_l), c_al_l)])

    xi = fpos[rows]
    diff = pos_all[None, :, :] - xi[:, None, :]
    d = np.sqrt((diff ** 2).sum(axis=2))
    w = _rep_weights(d, gamma, rrad)

    a = _self_propulsion(xi, fvel[rows], vis_idx[rows], exit_pos, c_s, s2, c_tau)
    a -= np.einsum("ij,ijk->ik", w * (mass_all * rep_c)[None, :], diff)

    unseen = vis_idx[rows] < 0
    if unseen.any():
        k = min(n_top, pos_all.shape[0])
        radius = np.partition(d, k - 1, axis=1)[:, k - 1]
        inside = d <= radius[:, None]
        dv = vel_all[None, :, :] - fvel[rows][:, None, :]
        align = np.einsum("ij,ijk->ik", inside * (mass_all * al_c)[None, :], dv)
        a += np.where(unseen[:, None], align, 0.0)

    acc[rows] = a
    return acc


def leader_velocities(lpos, lvel, lmass, lactive, fpos, fmass, factive,
                      controls, c_r_l, zeta, rrad):
    n_l = len(lmass)
    out = np.zeros((n_l, 2))
    rows = np.flatnonzero(lactive)
    if len(rows) == 0:
        return out

    cols_f = np.flatnonzero(factive)
    cols_l = np.flatnonzero(lactive)
    pos_all = np.concatenate([fpos[cols_f], lpos[cols_l]], axis=0)
    mass_all = np.concatenate([fmass[cols_f], lmass[cols_l]])

    yi = lpos[rows]
    diff = pos_all[None, :, :] - yi[:, None, :]
    d = np.sqrt((diff ** 2).sum(axis=2))
    w = _rep_weights(d, zeta, rrad)
    out[rows] = controls[rows] - c_r_l * np.einsum("ij,ijk->ik", w * mass_all[None, :], diff)
    return out


def mfmc_velocities(spos, svel, act_idx, batches, lpos, lvel, lmass, lactive,
                    vis_idx, exit_pos, dt, c_s, s2, c_tau, c_r_f, c_r_l,
                    c_al_f, c_al_l, gamma, rrad, rho_top, rho_f_active):
    """Velocity update of the batch-estimated mean-field step.

    ``act_idx`` lists the active sample ids; row i of ``batches`` holds the
    sample ids of the batch drawn for sample act_idx[i]; ``vis_idx`` is the
    visible-exit index per active row.  Returns the new velocities per row.
    """
    xi = spos[act_idx]
    vi = svel[act_idx]
    n_rows, m = batches.shape
    w_batch = rho_f_active / m

    total = _self_propulsion(xi, vi, vis_idx, exit_pos, c_s, s2, c_tau)

    diff_b = spos[batches] - xi[:, None, :]
    d_b = np.sqrt((diff_b ** 2).sum(axis=2))
    w_rep = _rep_weights(d_b, gamma, rrad)
    total -= (c_r_f * w_batch) * np.einsum("ij,ijk->ik", w_rep, diff_b)

    cols_l = np.flatnonzero(lactive)
    n_lead = len(cols_l)
    if n_lead:
        diff_l = lpos[cols_l][None, :, :] - xi[:, None, :]
        d_l = np.sqrt((diff_l ** 2).sum(axis=2))
        w_l = _rep_weights(d_l, gamma, rrad)
        total -= c_r_l * np.einsum("ij,ijk->ik", w_l * lmass[cols_l][None, :], diff_l)
    else:
        d_l = np.zeros((n_rows, 0))

    unseen = vis_idx < 0
    if unseen.any():
        merged = np.concatenate([d_b, d_l], axis=1)
        weights = np.concatenate([np.full(m, w_batch), lmass[cols_l]])
        order = np.argsort(merged, axis=1, kind="stable")
        d_sorted = np.take_along_axis(merged, order, axis=1)
        cum = np.cumsum(weights[order], axis=1)
        target = rho_top - _TIE_TOL * max(1.0, rho_top)
        hit = cum >= target
        first = np.where(hit.any(axis=1), hit.argmax(axis=1), merged.shape[1] - 1)
        r_star = d_sorted[np.arange(n_rows), first]

        inside_b = d_b <= r_star[:, None]
        dv_b = svel[batches] - vi[:, None, :]
        align = (c_al_f * w_batch) * np.einsum("ij,ijk->ik", inside_b, dv_b)
        if n_lead:
            inside_l = d_l <= r_star[:, None]
            dv_l = lvel[cols_l][None, :, :] - vi[:, None, :]
            align += c_al_l * np.einsum("ij,ijk->ik", inside_l * lmass[cols_l][None, :], dv_l)
        total += np.where(unseen[:, None], align, 0.0)

    return vi + dt * total
