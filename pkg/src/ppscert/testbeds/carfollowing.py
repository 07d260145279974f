"""Car following with a braking leader.

Scenario parameters are ``(decel_onset [s], decel_mag [m/s^2])``. The leader
cruises at ``v_leader`` and brakes at ``decel_mag`` from ``decel_onset`` on;
the follower starts braking at ``follower_decel`` after ``reaction_delay``
steps. Semi-implicit Euler with step ``dt`` over ``horizon_steps`` steps.
A crash is any step with gap <= 0 (the initial gap included).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import integrate, stats

from ppscert import kernels
from ppscert.core import OutcomeFn, ScenarioDistribution
from ppscert.errors import RejectedInputError, UnsupportedOracleError

_TINY = np.nextafter(0.0, 1.0)


def _positive_at_tie(y: np.ndarray) -> np.ndarray:
    # a gap of exactly zero is a crash; keep "metric > 0 iff crash" exact there
    return np.where(y == 0.0, _TINY, y)


@dataclass(frozen=True)
class CarFollowingBed:
    horizon_steps: int = 100
    dt: float = 0.1
    v_follower: float = 20.0
    v_leader: float = 20.0
    g0: float = 22.0
    reaction_delay: int = 10
    follower_decel: float = 6.0
    onset_range: tuple = (0.0, 5.0)
    decel_max: float = 8.0
    decel_shape: tuple = (2.0, 5.0)
    v_eps: float = 0.1
    quad_tol: float = 0.005
    quad_max_level: int = 16

    bed_id = "carfollowing"
    PI_KNOBS = ("decel_scale",)
    PHI_KNOBS = ()
    SCALE_RANGE = (0.5, 1.5)

    def __post_init__(self):
        if self.horizon_steps < 0:
            raise RejectedInputError("horizon_steps must be >= 0")
        if not self.dt > 0:
            raise RejectedInputError("dt must be positive")
        lo, hi = (float(v) for v in self.onset_range)
        if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
            raise RejectedInputError("onset_range must be a bounded interval")
        if not (math.isfinite(self.decel_max) and self.decel_max > 0):
            raise RejectedInputError("decel_max must be finite and positive")
        object.__setattr__(self, "onset_range", (lo, hi))
        object.__setattr__(self, "decel_shape", tuple(float(v) for v in self.decel_shape))

    def _args(self):
        return (
            int(self.horizon_steps), float(self.dt), float(self.v_follower), float(self.v_leader),
            float(self.g0), int(self.reaction_delay), float(self.follower_decel),
        )

    def rollout(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Minimum gap [m] and minimum PET-style time margin [s] per scenario row."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return kernels.car_following_batch(x[:, 0], x[:, 1], *self._args(), float(self.v_eps))

    def gap_metric(self, x: np.ndarray) -> np.ndarray:
        return _positive_at_tie(-self.rollout(x)[0])

    def pet_metric(self, x: np.ndarray) -> np.ndarray:
        """Negated post-encroachment-style margin; > 0 exactly on crashes."""
        return _positive_at_tie(-self.rollout(x)[1])

    def outcome(self) -> OutcomeFn:
        return OutcomeFn(
            binary=lambda x: self.rollout(x)[0] <= 0.0,
            metric=self.gap_metric,
            name="gap<=0",
        )

    def distribution(self, decel_scale: float = 1.0, label: str = "true") -> ScenarioDistribution:
        if not decel_scale > 0:
            raise RejectedInputError("decel_scale must be positive")
        lo, hi = self.onset_range
        a, b = self.decel_shape
        mag_hi = decel_scale * self.decel_max
        log_onset = -math.log(hi - lo)
        log_mag_scale = math.log(mag_hi)

        def sample(rng: np.random.Generator, n: int) -> np.ndarray:
            out = np.empty((n, 2))
            out[:, 0] = rng.uniform(lo, hi, n)
            out[:, 1] = mag_hi * rng.beta(a, b, n)
            return out

        def log_density(x: np.ndarray) -> np.ndarray:
            x = np.atleast_2d(x)
            on, m = x[:, 0], x[:, 1]
            in_on = (on >= lo) & (on <= hi)
            with np.errstate(divide="ignore"):
                lm = stats.beta.logpdf(m / mag_hi, a, b) - log_mag_scale
            return np.where(in_on, log_onset + lm, -np.inf)

        return ScenarioDistribution(
            dim=2,
            sample=sample,
            log_density=log_density,
            label=label,
            bed_id=self.bed_id,
            params={"decel_scale": float(decel_scale), "bounds": ((lo, hi), (0.0, mag_hi))},
        )

    def box_mass(self, dist: ScenarioDistribution, onset_lo, onset_hi, mag_lo, mag_hi) -> np.ndarray:
        """Exact probability of axis-aligned parameter boxes under ``dist``."""
        lo, hi = self.onset_range
        a, b = self.decel_shape
        top = dist.params["decel_scale"] * self.decel_max
        p_on = (np.clip(onset_hi, lo, hi) - np.clip(onset_lo, lo, hi)) / (hi - lo)
        p_mag = stats.beta.cdf(np.asarray(mag_hi) / top, a, b) - stats.beta.cdf(np.asarray(mag_lo) / top, a, b)
        return p_on * p_mag

    # -- oracle -----------------------------------------------------------------------
    def truth(self, dist: ScenarioDistribution, region=None) -> float:
        return self.quadrature(dist)[0]

    def crash_threshold(self, onset: np.ndarray, mag_top: float, iters: int = 60) -> np.ndarray:
        """Smallest braking magnitude in ``[0, mag_top]`` that crashes, per onset (inf if none).

        Harder leader braking lowers the leader speed at every step and hence the
        gap at every step, so the crash set is an upper interval in magnitude.
        """
        onset = np.asarray(onset, dtype=float)
        crash = lambda m: self.rollout(np.column_stack([onset, m]))[0] <= 0.0  # noqa: E731
        lo = np.zeros_like(onset)
        hi = np.full_like(onset, mag_top)
        never = ~crash(hi)
        always = crash(lo)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            c = crash(mid)
            hi = np.where(c, mid, hi)
            lo = np.where(c, lo, mid)
        out = np.where(always, 0.0, hi)
        return np.where(never, np.inf, out)

    def quadrature(self, dist: ScenarioDistribution) -> tuple[float, dict]:
        """Crash probability under ``dist``.

        Inner integral over magnitude: Beta tail mass above the bisected crash
        threshold. Outer integral over onset: trapezoid rule, halving the mesh
        until two successive estimates agree within ``quad_tol`` (relative).
        """
        if dist.bed_id != self.bed_id or "decel_scale" not in dist.params:
            raise UnsupportedOracleError("distribution is not a car-following law")
        (lo, hi), (_, top) = dist.params["bounds"]
        a, b = self.decel_shape
        history = []
        prev = None
        for level in range(6, self.quad_max_level + 1):
            on = np.linspace(lo, hi, 2**level + 1)
            m_star = self.crash_threshold(on, top)
            inner = np.where(np.isinf(m_star), 0.0, stats.beta.sf(np.minimum(m_star, top) / top, a, b))
            est = float(integrate.trapezoid(inner, on) / (hi - lo))
            history.append((len(on), est))
            if prev is not None and (est == prev == 0.0 or (prev > 0 and abs(est - prev) <= self.quad_tol * prev)):
                return est, {"nodes": len(on), "history": history, "converged": True}
            prev = est
        return prev, {"nodes": history[-1][0], "history": history, "converged": False}

    def truth_error(self) -> str:
        return f"trapezoid quadrature refined to successive agreement < {self.quad_tol:.1%}, documented error <= 1%"

    # -- perturbations ----------------------------------------------------------------
    def surrogate(self, knob: Optional[Mapping] = None) -> ScenarioDistribution:
        knob = dict(knob or {})
        unknown = set(knob) - set(self.PI_KNOBS)
        if unknown:
            raise RejectedInputError(f"unknown car-following knobs: {sorted(unknown)}")
        scale = float(knob.get("decel_scale", 1.0))
        lo, hi = self.SCALE_RANGE
        if not lo <= scale <= hi:
            raise RejectedInputError(f"decel_scale {scale} outside [{lo}, {hi}]")
        return self.distribution(decel_scale=scale, label="surrogate" if scale != 1.0 else "true")

    def proposal(self, descriptor: Optional[Mapping] = None) -> ScenarioDistribution:
        descriptor = dict(descriptor or {})
        unknown = set(descriptor) - {"decel_scale"}
        if unknown:
            raise RejectedInputError(f"unknown proposal keys: {sorted(unknown)}")
        return self.distribution(decel_scale=float(descriptor.get("decel_scale", 1.2)), label="proposal")
