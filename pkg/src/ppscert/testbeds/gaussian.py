from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import special

from ppscert.core import OutcomeFn, ScenarioDistribution
from ppscert.errors import RejectedInputError, UnsupportedOracleError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def normal_sf(z: float) -> float:
    """Upper-tail mass of the standard normal, accurate deep into the tail."""
    return 0.5 * float(special.erfc(z / math.sqrt(2.0)))


@dataclass(frozen=True)
class GaussianThresholdBed:
    """``d`` independent standard normals; failure iff the first exceeds ``tau``.

    Surrogates and IS proposals move only the first coordinate (mean shift,
    optional scale tilt), which is the only one the outcome depends on.
    """

    dim: int = 1
    tau: float = 3.090232
    perturb_shift: float = 0.0

    bed_id = "gaussian"
    PI_KNOBS = ("shift",)
    PHI_KNOBS = ()
    MAX_SHIFT = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise RejectedInputError("dim must be >= 1")
        if not math.isfinite(self.tau):
            raise RejectedInputError("tau must be finite")

    def metric(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(x)[:, 0] - self.tau

    def outcome(self) -> OutcomeFn:
        return OutcomeFn.from_metric(self.metric, name="x1>tau")

    def distribution(self, shift: float = 0.0, scale: float = 1.0, label: str = "true") -> ScenarioDistribution:
        if not scale > 0:
            raise RejectedInputError("scale must be positive")
        d = self.dim
        mean = np.zeros(d)
        mean[0] = shift
        sd = np.ones(d)
        sd[0] = scale
        log_norm = -d * _LOG_SQRT_2PI - math.log(scale)

        def sample(rng: np.random.Generator, n: int) -> np.ndarray:
            return rng.standard_normal((n, d)) * sd + mean

        def log_density(x: np.ndarray) -> np.ndarray:
            z = (np.atleast_2d(x) - mean) / sd
            return log_norm - 0.5 * np.sum(z * z, axis=1)

        return ScenarioDistribution(
            dim=d,
            sample=sample,
            log_density=log_density,
            label=label,
            bed_id=self.bed_id,
            params={"shift": float(shift), "scale": float(scale)},
        )

    def truth(self, dist: ScenarioDistribution, region=None) -> float:
        # a certified region holds no failures, so the tail risk equals the total
        p = dist.params
        if dist.bed_id != self.bed_id or "shift" not in p:
            raise UnsupportedOracleError("distribution is not a Gaussian-bed law")
        return normal_sf((self.tau - p["shift"]) / p["scale"])

    def truth_error(self) -> str:
        return "closed form (complementary error function), error <= 1e-9"

    def surrogate(self, knob: Optional[Mapping] = None) -> ScenarioDistribution:
        knob = dict(knob or {})
        unknown = set(knob) - set(self.PI_KNOBS)
        if unknown:
            raise RejectedInputError(f"unknown Gaussian-bed knobs: {sorted(unknown)}")
        shift = float(knob.get("shift", self.perturb_shift))
        if abs(shift) > self.MAX_SHIFT:
            raise RejectedInputError(f"mean shift {shift} exceeds the declared range +-{self.MAX_SHIFT}")
        return self.distribution(shift=shift, label="surrogate" if shift != 0.0 else "true")

    def proposal(self, descriptor: Optional[Mapping] = None) -> ScenarioDistribution:
        """Mean-shift / scale-tilt family; ``{"shift": tau}`` centers the proposal on the boundary."""
        descriptor = dict(descriptor or {})
        unknown = set(descriptor) - {"shift", "scale"}
        if unknown:
            raise RejectedInputError(f"unknown proposal keys: {sorted(unknown)}")
        return self.distribution(
            shift=float(descriptor.get("shift", self.tau)),
            scale=float(descriptor.get("scale", 1.0)),
            label="proposal",
        )
