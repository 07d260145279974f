"""Finite grid world with slip and actuator-fault noise.

A scenario is a whole trajectory ``(c_0, ..., c_H)`` of cell indices (stored
as floats in the parameter vector). Its probability is the start weight times
the product of one-step transition probabilities, so changing the slip or
fault probability changes the scenario law while the outcome (``any cell is a
hazard``) stays fixed.

Per step a uniform ``u`` decides the realized move: ``u < slip`` picks one of
the four compass moves uniformly (``floor(4 u / slip)``), ``u < slip + fault``
executes the reverse of the commanded move, otherwise the command executes.
Moves into a wall leave the agent in place.
"""
from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ppscert import kernels
from ppscert._pykernels import MOVE_DC, MOVE_DR, REVERSE
from ppscert.core import OutcomeFn, ScenarioDistribution
from ppscert.errors import RejectedInputError, UnsupportedOracleError

MOVE_CODES = {"N": 0, "S": 1, "E": 2, "W": 3, ".": 4}
N_MOVES = 5


def _normalize_policy(policy, size: int, hazards: frozenset[int]) -> tuple[int, ...]:
    n_cells = size * size
    if isinstance(policy, str) and policy in ("stay", "away"):
        if policy == "stay" or not hazards:
            return (4,) * n_cells
        moves = []
        for cell in range(n_cells):
            best, best_d = 4, -1
            for mv in range(N_MOVES):
                nxt = _step_cell(cell, mv, size)
                d = min(_manhattan(nxt, h, size) for h in hazards)
                if d > best_d:
                    best, best_d = mv, d
            moves.append(best)
        return tuple(moves)
    if isinstance(policy, str):
        letters = [ch for ch in policy if not ch.isspace()]
    else:
        letters = list(policy)
    if len(letters) != n_cells:
        raise RejectedInputError(f"policy needs {n_cells} moves, got {len(letters)}")
    out = []
    for m in letters:
        if isinstance(m, str):
            if m not in MOVE_CODES:
                raise RejectedInputError(f"unknown move {m!r}; use N, S, E, W or '.'")
            out.append(MOVE_CODES[m])
        else:
            if not 0 <= int(m) < N_MOVES:
                raise RejectedInputError(f"move code {m} out of range")
            out.append(int(m))
    return tuple(out)


def _step_cell(cell: int, move: int, size: int) -> int:
    r, c = divmod(cell, size)
    r2, c2 = r + int(MOVE_DR[move]), c + int(MOVE_DC[move])
    if 0 <= r2 < size and 0 <= c2 < size:
        return r2 * size + c2
    return cell


def _manhattan(a: int, b: int, size: int) -> int:
    ra, ca = divmod(a, size)
    rb, cb = divmod(b, size)
    return abs(ra - rb) + abs(ca - cb)


@dataclass(frozen=True)
class GridWorldBed:
    size: int = 5
    hazard_cells: frozenset = field(default_factory=lambda: frozenset({(2, 2)}))
    slip_prob: float = 0.1
    fault_prob: float = 0.0
    horizon: int = 6
    policy: object = "away"
    start: object = "uniform"

    bed_id = "gridworld"
    PI_KNOBS = ("slip",)
    PHI_KNOBS = ("fault",)
    MAX_KNOB_SHIFT = 0.2

    def __post_init__(self):
        if self.size < 1:
            raise RejectedInputError("grid size must be >= 1")
        if self.horizon < 0:
            raise RejectedInputError("horizon must be >= 0")
        cells = frozenset(self._cell(rc) for rc in self.hazard_cells)
        object.__setattr__(self, "hazard_cells", frozenset(tuple(divmod(c, self.size)) for c in cells))
        self._check_noise(self.slip_prob, self.fault_prob)
        object.__setattr__(self, "_moves", _normalize_policy(self.policy, self.size, cells))
        object.__setattr__(self, "_start", self._start_weights(self.start, cells))

    # -- geometry -----------------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return self.size * self.size

    def _cell(self, rc) -> int:
        r, c = (int(v) for v in rc)
        if not (0 <= r < self.size and 0 <= c < self.size):
            raise RejectedInputError(f"cell {(r, c)} outside the {self.size}x{self.size} grid")
        return r * self.size + c

    @property
    def hazard_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_cells, dtype=bool)
        for rc in self.hazard_cells:
            mask[self._cell(rc)] = True
        return mask

    @property
    def moves(self) -> np.ndarray:
        return np.asarray(self._moves, dtype=np.int64)

    @property
    def start_weights(self) -> np.ndarray:
        return np.asarray(self._start, dtype=float)

    def step(self, cell: int, move: int) -> int:
        return _step_cell(cell, move, self.size)

    def _start_weights(self, start, hazards: frozenset[int]) -> tuple[float, ...]:
        w = np.zeros(self.n_cells)
        if isinstance(start, str):
            if start != "uniform":
                raise RejectedInputError(f"unknown start spec {start!r}")
            free = [c for c in range(self.n_cells) if c not in hazards] or list(range(self.n_cells))
            w[free] = 1.0
        elif isinstance(start, Mapping):
            cells = start.get("cells", [])
            weights = start.get("weights", [1.0] * len(cells))
            if len(cells) != len(weights) or not cells:
                raise RejectedInputError("start needs matching non-empty 'cells' and 'weights'")
            for rc, wt in zip(cells, weights):
                if wt < 0 or not math.isfinite(wt):
                    raise RejectedInputError("start weights must be finite and nonnegative")
                w[self._cell(rc)] += float(wt)
        else:
            raise RejectedInputError("start must be 'uniform' or a {cells, weights} mapping")
        total = math.fsum(w)
        if total <= 0:
            raise RejectedInputError("start weights sum to zero")
        return tuple(float(v) for v in w / total)

    @staticmethod
    def _check_noise(slip: float, fault: float) -> None:
        if not 0.0 <= slip < 1.0:
            raise RejectedInputError(f"slip probability {slip} outside [0, 1)")
        if not 0.0 <= fault < 1.0 or slip + fault >= 1.0:
            raise RejectedInputError(f"fault probability {fault} invalid (slip + fault must be < 1)")

    # -- dynamics --------------------------------------------------------------------
    def transition_matrix(self, slip: float, fault: float) -> np.ndarray:
        T = np.zeros((self.n_cells, self.n_cells))
        for cell in range(self.n_cells):
            a = self._moves[cell]
            for mv in range(4):
                T[cell, self.step(cell, mv)] += slip / 4.0
            T[cell, self.step(cell, int(REVERSE[a]))] += fault
            T[cell, self.step(cell, a)] += 1.0 - slip - fault
        return T

    def worst_case_successors(self, cell: int) -> set[int]:
        """Every cell one adversarial step can reach (any move, including staying)."""
        return {self.step(cell, mv) for mv in range(N_MOVES)}

    def outcome(self) -> OutcomeFn:
        mask = self.hazard_mask

        def binary(x: np.ndarray) -> np.ndarray:
            cells = np.asarray(np.atleast_2d(x), dtype=np.int64)
            return mask[cells].any(axis=1)

        def metric(x: np.ndarray) -> np.ndarray:
            # +1 on hitting a hazard, else minus the closest approach distance
            cells = np.asarray(np.atleast_2d(x), dtype=np.int64)
            dist = self._hazard_distance()[cells].min(axis=1).astype(float)
            return np.where(dist == 0, 1.0, -dist)

        return OutcomeFn(binary=binary, metric=metric, name="hits-hazard")

    def _hazard_distance(self) -> np.ndarray:
        hz = [self._cell(rc) for rc in self.hazard_cells]
        if not hz:
            return np.full(self.n_cells, 2 * self.size, dtype=np.int64)
        return np.array([min(_manhattan(c, h, self.size) for h in hz) for c in range(self.n_cells)])

    def distribution(
        self,
        slip: Optional[float] = None,
        fault: Optional[float] = None,
        start_weights: Optional[Sequence[float]] = None,
        label: str = "true",
    ) -> ScenarioDistribution:
        slip = self.slip_prob if slip is None else float(slip)
        fault = self.fault_prob if fault is None else float(fault)
        self._check_noise(slip, fault)
        w = self.start_weights if start_weights is None else np.asarray(start_weights, dtype=float)
        T = self.transition_matrix(slip, fault)
        cum = np.cumsum(w)
        cum = cum / cum[-1]
        moves, mask, size, H = self.moves, self.hazard_mask, self.size, self.horizon
        with np.errstate(divide="ignore"):
            logT = np.log(T)
            logw = np.log(w)

        def sample(rng: np.random.Generator, n: int) -> np.ndarray:
            u = rng.random((n, H + 1))
            paths, _ = kernels.grid_rollout_batch(u[:, 0], u[:, 1:], cum, moves, slip, fault, size, mask)
            return paths.astype(float)

        def log_density(x: np.ndarray) -> np.ndarray:
            cells = np.asarray(np.atleast_2d(x), dtype=np.int64)
            out = logw[cells[:, 0]].copy()
            for k in range(H):
                out += logT[cells[:, k], cells[:, k + 1]]
            return out

        return ScenarioDistribution(
            dim=H + 1,
            sample=sample,
            log_density=log_density,
            label=label,
            bed_id=self.bed_id,
            params={"slip": slip, "fault": fault, "start_weights": tuple(float(v) for v in w)},
        )

    # -- oracle ------------------------------------------------------------------------
    def failure_by_start(self, slip: float, fault: float) -> np.ndarray:
        """Exact P(hit a hazard within H steps | start cell), by backward propagation."""
        T = self.transition_matrix(slip, fault)
        mask = self.hazard_mask
        v = mask.astype(float)
        for _ in range(self.horizon):
            v = np.where(mask, 1.0, T @ v)
        return v

    def truth(self, dist: ScenarioDistribution, region=None) -> float:
        p = dist.params
        if dist.bed_id != self.bed_id or "slip" not in p:
            raise UnsupportedOracleError("distribution is not a grid-world law")
        v = self.failure_by_start(p["slip"], p["fault"])
        w = np.asarray(p["start_weights"], dtype=float)
        if region is not None:
            w = np.where(region.contains_cells(np.arange(self.n_cells)), 0.0, w)
        return math.fsum(w * v)

    def truth_error(self) -> str:
        return "exact finite-chain propagation, error <= 1e-12"

    # -- perturbations ---------------------------------------------------------------
    def surrogate(self, knob: Optional[Mapping] = None) -> ScenarioDistribution:
        knob = dict(knob or {})
        unknown = set(knob) - set(self.PI_KNOBS) - set(self.PHI_KNOBS)
        if unknown:
            raise RejectedInputError(f"unknown grid-world knobs: {sorted(unknown)}")
        slip = float(knob.get("slip", self.slip_prob))
        fault = float(knob.get("fault", self.fault_prob))
        if abs(slip - self.slip_prob) > self.MAX_KNOB_SHIFT + 1e-12:
            raise RejectedInputError(f"slip shift {slip - self.slip_prob:+.3g} exceeds +-{self.MAX_KNOB_SHIFT}")
        if abs(fault - self.fault_prob) > self.MAX_KNOB_SHIFT + 1e-12:
            raise RejectedInputError(f"fault shift {fault - self.fault_prob:+.3g} exceeds +-{self.MAX_KNOB_SHIFT}")
        changed = slip != self.slip_prob or fault != self.fault_prob
        return self.distribution(slip=slip, fault=fault, label="surrogate" if changed else "true")

    def proposal(self, descriptor: Optional[Mapping] = None) -> ScenarioDistribution:
        """Noise-tilted proposal: same family with larger slip/fault probabilities."""
        descriptor = dict(descriptor or {})
        unknown = set(descriptor) - {"slip", "fault"}
        if unknown:
            raise RejectedInputError(f"unknown proposal keys: {sorted(unknown)}")
        return self.distribution(
            slip=float(descriptor.get("slip", self.slip_prob)),
            fault=float(descriptor.get("fault", self.fault_prob)),
            label="proposal",
        )

    def union_support(self, T_a: np.ndarray, T_b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """CSR successor lists over the union of both supports, with both probabilities."""
        indptr = [0]
        indices: list[int] = []
        pa: list[float] = []
        pb: list[float] = []
        for cell in range(self.n_cells):
            nz = np.flatnonzero((T_a[cell] > 0) | (T_b[cell] > 0))
            indices.extend(int(j) for j in nz)
            pa.extend(float(T_a[cell, j]) for j in nz)
            pb.extend(float(T_b[cell, j]) for j in nz)
            indptr.append(len(indices))
        return (
            np.asarray(indptr, dtype=np.int64),
            np.asarray(indices, dtype=np.int64),
            np.asarray(pa, dtype=float),
            np.asarray(pb, dtype=float),
        )

    def worst_case_matrix(self) -> np.ndarray:
        """Uniform weight on every adversarial successor; its support is the worst-case closure."""
        T = np.zeros((self.n_cells, self.n_cells))
        for cell in range(self.n_cells):
            succ = sorted(self.worst_case_successors(cell))
            T[cell, succ] = 1.0 / len(succ)
        return T

    def cells_at(self, indices: Iterable[int]) -> list[tuple[int, int]]:
        return [tuple(divmod(int(i), self.size)) for i in indices]
