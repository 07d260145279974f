# cython: language_level=3
"""Compiled twins of the loops in ``_pykernels``. Same arithmetic, same order."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef long[5] MOVE_DR = [-1, 1, 0, 0, 0]
cdef long[5] MOVE_DC = [0, 0, 1, -1, 0]
cdef long[5] REVERSE = [1, 0, 3, 2, 4]


def car_following_batch(onset, mag, long horizon, double dt, double v_follower, double v_leader,
                        double g0, long reaction_delay, double follower_decel, double v_eps):
    cdef double[::1] on = np.ascontiguousarray(onset, dtype=np.float64)
    cdef double[::1] mg = np.ascontiguousarray(mag, dtype=np.float64)
    cdef Py_ssize_t n = on.shape[0]
    out_gap = np.empty(n, dtype=np.float64)
    out_pet = np.empty(n, dtype=np.float64)
    cdef double[::1] min_gap = out_gap
    cdef double[::1] min_pet = out_pet
    cdef double delay_dt = reaction_delay * dt
    cdef double bdt = follower_decel * dt
    cdef double g, vl, vf, t, react, pet, mgap, mpet, denom
    cdef Py_ssize_t i
    cdef long k
    with nogil:
        for i in range(n):
            g = g0
            vl = v_leader
            vf = v_follower
            react = on[i] + delay_dt
            mgap = g
            denom = vf if vf > v_eps else v_eps
            mpet = g / denom
            for k in range(horizon):
                t = k * dt
                if t >= on[i]:
                    vl = vl - mg[i] * dt
                    if vl < 0.0:
                        vl = 0.0
                if t >= react:
                    vf = vf - bdt
                    if vf < 0.0:
                        vf = 0.0
                g = g + (vl - vf) * dt
                if g < mgap:
                    mgap = g
                denom = vf if vf > v_eps else v_eps
                pet = g / denom
                if pet < mpet:
                    mpet = pet
            min_gap[i] = mgap
            min_pet[i] = mpet
    return out_gap, out_pet


def car_following_interval(onset_lo, onset_hi, mag_hi, long horizon, double dt, double v_follower,
                           double v_leader, double g0, long reaction_delay, double follower_decel):
    cdef double[::1] olo = np.ascontiguousarray(onset_lo, dtype=np.float64)
    cdef double[::1] ohi = np.ascontiguousarray(onset_hi, dtype=np.float64)
    cdef double[::1] mhi = np.ascontiguousarray(mag_hi, dtype=np.float64)
    cdef Py_ssize_t n = olo.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] min_gap = out
    cdef double delay_dt = reaction_delay * dt
    cdef double bdt = follower_decel * dt
    cdef double g, vl, vf, t, react, mgap
    cdef Py_ssize_t i
    cdef long k
    with nogil:
        for i in range(n):
            g = g0
            vl = v_leader
            vf = v_follower
            react = ohi[i] + delay_dt
            mgap = g
            for k in range(horizon):
                t = k * dt
                if t >= olo[i]:
                    vl = vl - mhi[i] * dt
                    if vl < 0.0:
                        vl = 0.0
                if t >= react:
                    vf = vf - bdt
                    if vf < 0.0:
                        vf = 0.0
                g = g + (vl - vf) * dt
                if g < mgap:
                    mgap = g
            min_gap[i] = mgap
    return out


def grid_rollout_batch(start_u, step_u, cum_start, policy, double slip, double fault, long size, hazard):
    cdef double[::1] su = np.ascontiguousarray(start_u, dtype=np.float64)
    cdef Py_ssize_t n = su.shape[0]
    cdef double[:, ::1] uu = np.ascontiguousarray(step_u, dtype=np.float64).reshape(n, -1)
    cdef double[::1] cum = np.ascontiguousarray(cum_start, dtype=np.float64)
    cdef long[::1] pol = np.ascontiguousarray(policy, dtype=np.int64)
    cdef cnp.uint8_t[::1] haz = np.ascontiguousarray(hazard, dtype=np.uint8)
    cdef Py_ssize_t horizon = uu.shape[1]
    cdef Py_ssize_t ncum = cum.shape[0]
    paths_arr = np.empty((n, horizon + 1), dtype=np.int64)
    fail_arr = np.zeros(n, dtype=bool)
    cdef long[:, ::1] paths = paths_arr
    cdef cnp.uint8_t[::1] fail = fail_arr.view(np.uint8)
    cdef double sf = slip + fault
    cdef Py_ssize_t i, k, lo, hi, mid
    cdef long cell, a, mv, r, c
    cdef double u
    cdef cnp.uint8_t f
    with nogil:
        for i in range(n):
            # searchsorted(cum, u, side="right")
            lo = 0
            hi = ncum
            while lo < hi:
                mid = (lo + hi) // 2
                if su[i] < cum[mid]:
                    hi = mid
                else:
                    lo = mid + 1
            if lo > ncum - 1:
                lo = ncum - 1
            cell = lo
            paths[i, 0] = cell
            f = haz[cell]
            for k in range(horizon):
                u = uu[i, k]
                a = pol[cell]
                if u < slip:
                    mv = <long>((u / slip) * 4.0)
                    if mv > 3:
                        mv = 3
                elif u < sf:
                    mv = REVERSE[a]
                else:
                    mv = a
                r = cell // size + MOVE_DR[mv]
                c = cell % size + MOVE_DC[mv]
                if r >= 0 and r < size and c >= 0 and c < size:
                    cell = r * size + c
                paths[i, k + 1] = cell
                if haz[cell]:
                    f = 1
            fail[i] = f
    return paths_arr, fail_arr


cdef inline void _neumaier(double* total, double* comp, double x) noexcept nogil:
    cdef double t = total[0] + x
    if fabs(total[0]) >= fabs(x):
        comp[0] += (total[0] - t) + x
    else:
        comp[0] += (x - t) + total[0]
    total[0] = t


def grid_enumerate(starts, w_a, w_b, indptr, indices, prob_a, prob_b, hazard, long horizon):
    cdef long[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef double[::1] wa = np.ascontiguousarray(w_a, dtype=np.float64)
    cdef double[::1] wb = np.ascontiguousarray(w_b, dtype=np.float64)
    cdef long[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef long[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef double[::1] pa_ = np.ascontiguousarray(prob_a, dtype=np.float64)
    cdef double[::1] pb_ = np.ascontiguousarray(prob_b, dtype=np.float64)
    cdef cnp.uint8_t[::1] haz = np.ascontiguousarray(hazard, dtype=np.uint8)
    # explicit DFS stack: per depth, the cell, the next edge to try and the path masses
    stack_cell_arr = np.empty(horizon + 1, dtype=np.int64)
    stack_edge_arr = np.empty(horizon + 1, dtype=np.int64)
    stack_pa_arr = np.empty(horizon + 1, dtype=np.float64)
    stack_pb_arr = np.empty(horizon + 1, dtype=np.float64)
    cdef long[::1] s_cell = stack_cell_arr
    cdef long[::1] s_edge = stack_edge_arr
    cdef double[::1] s_pa = stack_pa_arr
    cdef double[::1] s_pb = stack_pb_arr
    cdef double fa = 0.0, ca = 0.0, fb = 0.0, cb = 0.0, fd = 0.0, cd = 0.0
    cdef long leaves = 0, fails = 0
    cdef Py_ssize_t si
    cdef long depth, cell, j, nxt
    cdef double pa, pb
    with nogil:
        for si in range(st.shape[0]):
            cell = st[si]
            depth = 0
            s_cell[0] = cell
            s_pa[0] = wa[cell]
            s_pb[0] = wb[cell]
            # entering a node: evaluate it, then either stop or start its edge scan
            if haz[cell]:
                _neumaier(&fa, &ca, s_pa[0])
                _neumaier(&fb, &cb, s_pb[0])
                _neumaier(&fd, &cd, s_pa[0] - s_pb[0])
                leaves += 1
                fails += 1
                continue
            if horizon == 0:
                leaves += 1
                continue
            s_edge[0] = ptr[cell]
            while depth >= 0:
                cell = s_cell[depth]
                j = s_edge[depth]
                if j >= ptr[cell + 1]:
                    depth -= 1
                    continue
                s_edge[depth] = j + 1
                nxt = idx[j]
                pa = s_pa[depth] * pa_[j]
                pb = s_pb[depth] * pb_[j]
                if haz[nxt]:
                    _neumaier(&fa, &ca, pa)
                    _neumaier(&fb, &cb, pb)
                    _neumaier(&fd, &cd, pa - pb)
                    leaves += 1
                    fails += 1
                elif depth + 1 == horizon:
                    leaves += 1
                else:
                    depth += 1
                    s_cell[depth] = nxt
                    s_pa[depth] = pa
                    s_pb[depth] = pb
                    s_edge[depth] = ptr[nxt]
    return fa + ca, fb + cb, fd + cd, leaves, fails
