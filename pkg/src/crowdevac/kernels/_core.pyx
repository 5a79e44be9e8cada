# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled interaction kernels; same contract as `_fallback`."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, pow, sqrt

cnp.import_array()

BACKEND_NAME = "cython"

cdef double TIE_TOL = 1e-12


cdef inline double rep_weight(double d, double expo, double rrad) nogil:
    if d <= 0.0 or d >= rrad:
        return 0.0
    return exp(-pow(d, expo)) / d


cdef inline void heap_sift_down(double* heap, int size, int start) nogil:
    cdef int root = start, child
    cdef double tmp
    while 2 * root + 1 < size:
        child = 2 * root + 1
        if child + 1 < size and heap[child + 1] > heap[child]:
            child += 1
        if heap[child] > heap[root]:
            tmp = heap[root]; heap[root] = heap[child]; heap[child] = tmp
            root = child
        else:
            break


cdef inline double kth_smallest(double* values, int n, int k, double* heap) nogil:
    """k-th smallest of values (1-based k <= n) via a size-k max-heap."""
    cdef int i, j
    for i in range(k):
        heap[i] = values[i]
    # heapify
    for i in range((k - 2) // 2, -1, -1):
        heap_sift_down(heap, k, i)
    for i in range(k, n):
        if values[i] < heap[0]:
            heap[0] = values[i]
            heap_sift_down(heap, k, 0)
    return heap[0]


cdef inline void insertion_sort(double* a, int n) nogil:
    cdef int i, j
    cdef double key
    for i in range(1, n):
        key = a[i]
        j = i - 1
        while j >= 0 and a[j] > key:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = key


cdef void quicksort(double* a, int lo, int hi) nogil:
    cdef int i, j
    cdef double pivot, tmp
    while hi - lo > 24:
        pivot = a[(lo + hi) // 2]
        i = lo
        j = hi
        while i <= j:
            while a[i] < pivot:
                i += 1
            while a[j] > pivot:
                j -= 1
            if i <= j:
                tmp = a[i]; a[i] = a[j]; a[j] = tmp
                i += 1
                j -= 1
        if j - lo < hi - i:
            quicksort(a, lo, j)
            lo = i
        else:
            quicksort(a, i, hi)
            hi = j
    insertion_sort(a + lo, hi - lo + 1)


def follower_accelerations(double[:, ::1] fpos, double[:, ::1] fvel,
                           double[::1] fmass, cnp.uint8_t[::1] factive,
                           double[:, ::1] lpos, double[:, ::1] lvel,
                           double[::1] lmass, cnp.uint8_t[::1] lactive,
                           long[::1] vis_idx, double[:, ::1] exit_pos,
                           double c_s, double s2, double c_tau,
                           double c_r_f, double c_r_l,
                           double c_al_f, double c_al_l,
                           double gamma, double rrad, int n_top):
    cdef int n_f = fpos.shape[0]
    cdef int n_l = lpos.shape[0]
    out_arr = np.zeros((n_f, 2))
    cdef double[:, ::1] out = out_arr

    # gather active agents: followers first, then leaders
    cdef int n_all = 0
    cdef int j, i, e, k_sel
    for j in range(n_f):
        if factive[j]:
            n_all += 1
    for j in range(n_l):
        if lactive[j]:
            n_all += 1
    if n_all == 0:
        return out_arr

    pos_buf = np.empty((n_all, 2))
    vel_buf = np.empty((n_all, 2))
    mr_buf = np.empty(n_all)   # mass * repulsion coefficient
    ma_buf = np.empty(n_all)   # mass * alignment coefficient
    m_buf = np.empty(n_all)
    cdef double[:, ::1] pos = pos_buf
    cdef double[:, ::1] vel = vel_buf
    cdef double[::1] mr = mr_buf
    cdef double[::1] ma = ma_buf
    cdef int idx = 0
    for j in range(n_f):
        if factive[j]:
            pos[idx, 0] = fpos[j, 0]; pos[idx, 1] = fpos[j, 1]
            vel[idx, 0] = fvel[j, 0]; vel[idx, 1] = fvel[j, 1]
            mr[idx] = fmass[j] * c_r_f
            ma[idx] = fmass[j] * c_al_f
            idx += 1
    for j in range(n_l):
        if lactive[j]:
            pos[idx, 0] = lpos[j, 0]; pos[idx, 1] = lpos[j, 1]
            vel[idx, 0] = lvel[j, 0]; vel[idx, 1] = lvel[j, 1]
            mr[idx] = lmass[j] * c_r_l
            ma[idx] = lmass[j] * c_al_l
            idx += 1

    dist_buf = np.empty(n_all)
    heap_buf = np.empty(n_all)
    cdef double[::1] dist = dist_buf
    cdef double[::1] heap = heap_buf

    cdef double xi0, xi1, vi0, vi1, dx, dy, d, w, ax, ay, speed2
    cdef double tx, ty, tn, radius
    for i in range(n_f):
        if not factive[i]:
            continue
        xi0 = fpos[i, 0]; xi1 = fpos[i, 1]
        vi0 = fvel[i, 0]; vi1 = fvel[i, 1]
        speed2 = vi0 * vi0 + vi1 * vi1
        ax = c_s * (s2 - speed2) * vi0
        ay = c_s * (s2 - speed2) * vi1
        e = vis_idx[i]
        if e >= 0:
            tx = exit_pos[e, 0] - xi0
            ty = exit_pos[e, 1] - xi1
            tn = sqrt(tx * tx + ty * ty)
            if tn > 0.0:
                ax += c_tau * (tx / tn - vi0)
                ay += c_tau * (ty / tn - vi1)
            else:
                ax += c_tau * (0.0 - vi0)
                ay += c_tau * (0.0 - vi1)
        # repulsion and distances
        for j in range(n_all):
            dx = pos[j, 0] - xi0
            dy = pos[j, 1] - xi1
            d = sqrt(dx * dx + dy * dy)
            dist[j] = d
            w = rep_weight(d, gamma, rrad)
            if w != 0.0:
                ax -= mr[j] * w * dx
                ay -= mr[j] * w * dy
        # topological alignment, off inside visibility areas
        if e < 0:
            k_sel = n_top if n_top < n_all else n_all
            radius = kth_smallest(&dist[0], n_all, k_sel, &heap[0])
            for j in range(n_all):
                if dist[j] <= radius:
                    ax += ma[j] * (vel[j, 0] - vi0)
                    ay += ma[j] * (vel[j, 1] - vi1)
        out[i, 0] = ax
        out[i, 1] = ay
    return out_arr


def leader_velocities(double[:, ::1] lpos, double[:, ::1] lvel,
                      double[::1] lmass, cnp.uint8_t[::1] lactive,
                      double[:, ::1] fpos, double[::1] fmass,
                      cnp.uint8_t[::1] factive, double[:, ::1] controls,
                      double c_r_l, double zeta, double rrad):
    cdef int n_l = lpos.shape[0]
    cdef int n_f = fpos.shape[0]
    out_arr = np.zeros((n_l, 2))
    cdef double[:, ::1] out = out_arr
    cdef int k, j
    cdef double y0, y1, dx, dy, d, w, wx, wy
    for k in range(n_l):
        if not lactive[k]:
            continue
        y0 = lpos[k, 0]; y1 = lpos[k, 1]
        wx = controls[k, 0]; wy = controls[k, 1]
        for j in range(n_f):
            if not factive[j]:
                continue
            dx = fpos[j, 0] - y0
            dy = fpos[j, 1] - y1
            d = sqrt(dx * dx + dy * dy)
            w = rep_weight(d, zeta, rrad)
            if w != 0.0:
                wx -= c_r_l * fmass[j] * w * dx
                wy -= c_r_l * fmass[j] * w * dy
        for j in range(n_l):
            if not lactive[j]:
                continue
            dx = lpos[j, 0] - y0
            dy = lpos[j, 1] - y1
            d = sqrt(dx * dx + dy * dy)
            w = rep_weight(d, zeta, rrad)
            if w != 0.0:
                wx -= c_r_l * lmass[j] * w * dx
                wy -= c_r_l * lmass[j] * w * dy
        out[k, 0] = wx
        out[k, 1] = wy
    return out_arr


def mfmc_velocities(double[:, ::1] spos, double[:, ::1] svel,
                    long[::1] act_idx, long[:, ::1] batches,
                    double[:, ::1] lpos, double[:, ::1] lvel,
                    double[::1] lmass, cnp.uint8_t[::1] lactive,
                    long[::1] vis_idx, double[:, ::1] exit_pos,
                    double dt, double c_s, double s2, double c_tau,
                    double c_r_f, double c_r_l, double c_al_f, double c_al_l,
                    double gamma, double rrad, double rho_top,
                    double rho_f_active):
    cdef int n_rows = act_idx.shape[0]
    cdef int m = batches.shape[1]
    cdef int n_l = lpos.shape[0]
    out_arr = np.empty((n_rows, 2))
    cdef double[:, ::1] out = out_arr

    cdef int n_lead = 0
    cdef int j, i, e, a, bj
    lead_ids_buf = np.empty(n_l, dtype=np.int64)
    cdef long[::1] lead_ids = lead_ids_buf
    for j in range(n_l):
        if lactive[j]:
            lead_ids[n_lead] = j
            n_lead += 1

    cdef double w_batch = rho_f_active / m
    db_buf = np.empty(m)
    db_sorted_buf = np.empty(m)
    dl_buf = np.empty(n_l + 1)
    ld_buf = np.empty(n_l + 1)
    lm_buf = np.empty(n_l + 1)
    cdef double[::1] db = db_buf
    cdef double[::1] db_sorted = db_sorted_buf
    cdef double[::1] dl = dl_buf
    cdef double[::1] ld = ld_buf   # leader distances sorted
    cdef double[::1] lm = lm_buf   # leader masses in the same order

    cdef double xi0, xi1, vi0, vi1, dx, dy, d, w, tx, ty, tn, speed2
    cdef double sx, sy, r_star, cum, target, lead_cum, key_d, key_m
    cdef int kb, kl, p
    target = rho_top - TIE_TOL * (1.0 if rho_top < 1.0 else rho_top)

    for i in range(n_rows):
        a = act_idx[i]
        xi0 = spos[a, 0]; xi1 = spos[a, 1]
        vi0 = svel[a, 0]; vi1 = svel[a, 1]
        speed2 = vi0 * vi0 + vi1 * vi1
        sx = c_s * (s2 - speed2) * vi0
        sy = c_s * (s2 - speed2) * vi1
        e = vis_idx[i]
        if e >= 0:
            tx = exit_pos[e, 0] - xi0
            ty = exit_pos[e, 1] - xi1
            tn = sqrt(tx * tx + ty * ty)
            if tn > 0.0:
                sx += c_tau * (tx / tn - vi0)
                sy += c_tau * (ty / tn - vi1)
            else:
                sx += c_tau * (0.0 - vi0)
                sy += c_tau * (0.0 - vi1)
        # batch repulsion estimate
        for j in range(m):
            bj = batches[i, j]
            dx = spos[bj, 0] - xi0
            dy = spos[bj, 1] - xi1
            d = sqrt(dx * dx + dy * dy)
            db[j] = d
            w = rep_weight(d, gamma, rrad)
            if w != 0.0:
                sx -= c_r_f * w_batch * w * dx
                sy -= c_r_f * w_batch * w * dy
        # full-leader repulsion
        for j in range(n_lead):
            bj = lead_ids[j]
            dx = lpos[bj, 0] - xi0
            dy = lpos[bj, 1] - xi1
            d = sqrt(dx * dx + dy * dy)
            dl[j] = d
            w = rep_weight(d, gamma, rrad)
            if w != 0.0:
                sx -= c_r_l * lmass[bj] * w * dx
                sy -= c_r_l * lmass[bj] * w * dy
        if e < 0:
            # topological radius: smallest distance where the accumulated
            # mass (batch weight per particle, leader masses) reaches rho_top
            for j in range(m):
                db_sorted[j] = db[j]
            quicksort(&db_sorted[0], 0, m - 1)
            for j in range(n_lead):
                bj = lead_ids[j]
                key_d = dl[j]
                key_m = lmass[bj]
                p = j - 1
                while p >= 0 and ld[p] > key_d:
                    ld[p + 1] = ld[p]
                    lm[p + 1] = lm[p]
                    p -= 1
                ld[p + 1] = key_d
                lm[p + 1] = key_m
            # two-pointer accumulation over the sorted lists
            r_star = -1.0
            kb = 0
            kl = 0
            lead_cum = 0.0
            while kb < m or kl < n_lead:
                if kl >= n_lead or (kb < m and db_sorted[kb] <= ld[kl]):
                    cum = (kb + 1) * w_batch + lead_cum
                    d = db_sorted[kb]
                    kb += 1
                else:
                    lead_cum += lm[kl]
                    cum = kb * w_batch + lead_cum
                    d = ld[kl]
                    kl += 1
                if cum >= target:
                    r_star = d
                    break
            if r_star < 0.0:
                # total available mass below the target: take everyone
                r_star = db_sorted[m - 1]
                if n_lead > 0 and ld[n_lead - 1] > r_star:
                    r_star = ld[n_lead - 1]
            # alignment estimate over the ball
            for j in range(m):
                if db[j] <= r_star:
                    bj = batches[i, j]
                    sx += c_al_f * w_batch * (svel[bj, 0] - vi0)
                    sy += c_al_f * w_batch * (svel[bj, 1] - vi1)
            for j in range(n_lead):
                if dl[j] <= r_star:
                    bj = lead_ids[j]
                    sx += c_al_l * lmass[bj] * (lvel[bj, 0] - vi0)
                    sy += c_al_l * lmass[bj] * (lvel[bj, 1] - vi1)
        out[i, 0] = vi0 + dt * sx
        out[i, 1] = vi1 + dt * sy
    return out_arr
