"""Pure numpy/Python kernels. Reference semantics for ``_kernels.pyx``.

Both backends perform the same floating-point operations in the same order,
so rollouts agree bit for bit; the enumeration sums use the same compensated
accumulation in the same traversal order.
"""
from __future__ import annotations

import numpy as np

# move codes: north, south, east, west, stay
MOVE_DR = np.array([-1, 1, 0, 0, 0], dtype=np.int64)
MOVE_DC = np.array([0, 0, 1, -1, 0], dtype=np.int64)
REVERSE = np.array([1, 0, 3, 2, 4], dtype=np.int64)


def car_following_batch(onset, mag, horizon, dt, v_follower, v_leader, g0, reaction_delay, follower_decel, v_eps):
    onset = np.ascontiguousarray(onset, dtype=np.float64)
    mag = np.ascontiguousarray(mag, dtype=np.float64)
    n = onset.shape[0]
    g = np.full(n, float(g0))
    vl = np.full(n, float(v_leader))
    vf = np.full(n, float(v_follower))
    react = onset + reaction_delay * dt
    min_gap = g.copy()
    min_pet = g / np.maximum(vf, v_eps)
    bdt = follower_decel * dt
    for k in range(int(horizon)):
        t = k * dt
        lead_brake = t >= onset
        vl = np.where(lead_brake, np.maximum(vl - mag * dt, 0.0), vl)
        vf = np.where(t >= react, np.maximum(vf - bdt, 0.0), vf)
        g = g + (vl - vf) * dt
        np.minimum(min_gap, g, out=min_gap)
        np.minimum(min_pet, g / np.maximum(vf, v_eps), out=min_pet)
    return min_gap, min_pet


def car_following_interval(onset_lo, onset_hi, mag_hi, horizon, dt, v_follower, v_leader, g0, reaction_delay, follower_decel):
    """Lower bound on the gap trajectory over parameter boxes (vectorized over boxes).

    Leader speed is smallest with the earliest onset and the hardest braking;
    follower speed is largest with the latest onset (latest reaction).
    """
    onset_lo = np.ascontiguousarray(onset_lo, dtype=np.float64)
    onset_hi = np.ascontiguousarray(onset_hi, dtype=np.float64)
    mag_hi = np.ascontiguousarray(mag_hi, dtype=np.float64)
    n = onset_lo.shape[0]
    g = np.full(n, float(g0))
    vl = np.full(n, float(v_leader))
    vf = np.full(n, float(v_follower))
    react = onset_hi + reaction_delay * dt
    min_gap = g.copy()
    bdt = follower_decel * dt
    for k in range(int(horizon)):
        t = k * dt
        vl = np.where(t >= onset_lo, np.maximum(vl - mag_hi * dt, 0.0), vl)
        vf = np.where(t >= react, np.maximum(vf - bdt, 0.0), vf)
        g = g + (vl - vf) * dt
        np.minimum(min_gap, g, out=min_gap)
    return min_gap


def _step(cells, moves, size):
    r = cells // size + MOVE_DR[moves]
    c = cells % size + MOVE_DC[moves]
    inside = (r >= 0) & (r < size) & (c >= 0) & (c < size)
    return np.where(inside, r * size + c, cells)


def grid_rollout_batch(start_u, step_u, cum_start, policy, slip, fault, size, hazard):
    start_u = np.ascontiguousarray(start_u, dtype=np.float64)
    step_u = np.ascontiguousarray(step_u, dtype=np.float64).reshape(start_u.shape[0], -1)
    policy = np.asarray(policy, dtype=np.int64)
    hazard = np.asarray(hazard, dtype=bool)
    n, horizon = step_u.shape
    cells = np.searchsorted(cum_start, start_u, side="right")
    cells = np.minimum(cells, len(cum_start) - 1).astype(np.int64)
    paths = np.empty((n, horizon + 1), dtype=np.int64)
    paths[:, 0] = cells
    fail = hazard[cells].copy()
    sf = slip + fault
    for k in range(horizon):
        u = step_u[:, k]
        intended = policy[cells]
        if slip > 0:
            # lanes with u >= slip are discarded below; they may overflow for a subnormal slip
            with np.errstate(over="ignore"):
                slip_dir = np.minimum((u / slip) * 4.0, 3.0).astype(np.int64)
        else:
            slip_dir = intended
        moves = np.where(u < slip, slip_dir, np.where(u < sf, REVERSE[intended], intended))
        cells = _step(cells, moves, size)
        paths[:, k + 1] = cells
        fail |= hazard[cells]
    return paths, fail


def _neumaier(total, comp, x):
    t = total + x
    if abs(total) >= abs(x):
        comp += (total - t) + x
    else:
        comp += (x - t) + total
    return t, comp


def grid_enumerate(starts, w_a, w_b, indptr, indices, prob_a, prob_b, hazard, horizon):
    """Depth-first enumeration of every path from ``starts`` over the union support.

    A path stops at its first hazard cell (all continuations share the
    prefix's failure). Returns ``(fail_a, fail_b, fail_diff, n_leaves, n_fail)``
    where ``fail_diff`` accumulates ``p_a - p_b`` per failing path.
    """
    acc = [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]
    counts = [0, 0]

    def add(slot, x):
        acc[slot][0], acc[slot][1] = _neumaier(acc[slot][0], acc[slot][1], x)

    def visit(cell, depth, pa, pb):
        if hazard[cell]:
            add(0, pa)
            add(1, pb)
            add(2, pa - pb)
            counts[0] += 1
            counts[1] += 1
            return
        if depth == horizon:
            counts[0] += 1
            return
        for j in range(indptr[cell], indptr[cell + 1]):
            visit(int(indices[j]), depth + 1, pa * prob_a[j], pb * prob_b[j])

    for s in starts:
        s = int(s)
        visit(s, 0, float(w_a[s]), float(w_b[s]))
    return acc[0][0] + acc[0][1], acc[1][0] + acc[1][1], acc[2][0] + acc[2][1], counts[0], counts[1]
