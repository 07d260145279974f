from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional

from ppscert.errors import RejectedInputError

BOUNDS = ("clopper_pearson", "hoeffding", "clt")


@dataclass(frozen=True)
class EstimatorConfig:
    """Budget, confidence, seed and the method-specific knobs.

    ``n`` is the total sample budget for CMC/IS/VaR and the per-level sample
    count for subset simulation and splitting.
    """

    n: int = 10_000
    confidence: float = 0.95
    seed: int = 0
    bound: str = "clopper_pearson"
    proposal: Mapping[str, Any] = field(default_factory=dict)
    rho: float = 0.1
    max_levels: int = 30
    levels: Optional[tuple[float, ...]] = None
    factor: int = 10
    moves: int = 5
    block_size: int = 50
    epsilon: float = 0.01
    gev_method: str = "pwm"
    min_acceptance: float = 0.01

    def __post_init__(self):
        if int(self.n) < 1:
            raise RejectedInputError("n must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise RejectedInputError("confidence must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise RejectedInputError("seed must be a 64-bit unsigned integer")
        if self.bound not in BOUNDS:
            raise RejectedInputError(f"bound must be one of {BOUNDS}")
        if not 0.0 < self.rho < 1.0:
            raise RejectedInputError("rho must lie in (0, 1)")
        if self.block_size < 2:
            raise RejectedInputError("block size must be >= 2")
        if not 0.0 < self.epsilon < 1.0:
            raise RejectedInputError("epsilon must lie in (0, 1)")
        if self.factor < 1 or self.moves < 1:
            raise RejectedInputError("factor and moves must be >= 1")
        if self.gev_method not in ("pwm", "mle"):
            raise RejectedInputError("gev_method must be 'pwm' or 'mle'")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))

    def with_(self, **changes) -> "EstimatorConfig":
        return replace(self, **changes)
