"""Independent reference computations used by the tests.

Nothing here imports the dynamics or oracle code under test; grid paths are
enumerated from a separate transcription of the move rules.
"""
from __future__ import annotations

# frozen from 50-digit mpmath evaluations of erfc(t / sqrt 2) / 2
GAUSS_TAIL_3_090232 = 1.0000010308950945722e-3
GAUSS_TAIL_4_7534243 = 9.9999999999999974365e-7
TAU_1E3 = 3.090232
TAU_1E6 = 4.753424308822899

# 5x5 grid, hazard (2, 2), slip 0.10 / 0.12, horizon 6, "away" policy, uniform starts
GRID5_RISK_SLIP10 = 0.004699855957031251
GRID5_RISK_SLIP12 = 0.005788680169999999

_DELTA = {0: (-1, 0), 1: (1, 0), 2: (0, 1), 3: (0, -1), 4: (0, 0)}
_REVERSE = {0: 1, 1: 0, 2: 3, 3: 2, 4: 4}


def _step(cell, move, size):
    r, c = divmod(cell, size)
    dr, dc = _DELTA[move]
    r2, c2 = r + dr, c + dc
    return r2 * size + c2 if 0 <= r2 < size and 0 <= c2 < size else cell


def _successors(cell, policy, slip, fault, size):
    a = int(policy[cell])
    out = {}
    for m in range(4):
        d = _step(cell, m, size)
        out[d] = out.get(d, 0.0) + slip / 4.0
    d = _step(cell, _REVERSE[a], size)
    out[d] = out.get(d, 0.0) + fault
    d = _step(cell, a, size)
    out[d] = out.get(d, 0.0) + 1.0 - slip - fault
    return [(d, p) for d, p in out.items() if p > 0]


def grid_risk(size, hazards, slip, fault, horizon, policy, weights):
    """Failure probability by depth-first enumeration of every path."""

    def go(c, h):
        if c in hazards:
            return 1.0
        if h == 0:
            return 0.0
        return sum(p * go(d, h - 1) for d, p in _successors(c, policy, slip, fault, size))

    return sum(w * go(c, horizon) for c, w in enumerate(weights) if w > 0)


def grid_path_masses(size, slip, fault, horizon, policy, weights):
    """``{path tuple: probability}`` over all full-length paths."""
    out = {}

    def go(path, p):
        if len(path) == horizon + 1:
            out[path] = out.get(path, 0.0) + p
            return
        for d, q in _successors(path[-1], policy, slip, fault, size):
            go(path + (d,), p * q)

    for c, w in enumerate(weights):
        if w > 0:
            go((c,), w)
    return out


def worst_case_reach(size, start, horizon):
    """Cells reachable from ``start`` in at most ``horizon`` adversarial steps."""
    seen = {start}
    frontier = {start}
    for _ in range(horizon):
        frontier = {_step(c, m, size) for c in frontier for m in range(5)}
        seen |= frontier
    return seen
