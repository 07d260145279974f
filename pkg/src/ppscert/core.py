"""Domain types shared by every module, and the arithmetic that turns an error
ledger into a pass/fail certificate."""
from __future__ import annotations

import enum
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Optional

import numpy as np

from ppscert import canonical
from ppscert.errors import RejectedInputError

BatchFn = Callable[[np.ndarray], np.ndarray]


class Method(str, enum.Enum):
    CMC = "CMC"
    IS = "IS"
    SUBSET = "SUBSET"
    SPLITTING = "SPLITTING"
    VAR_SCENARIO = "VAR_SCENARIO"
    GEV = "GEV"


class Verdict(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"


def _frozen_map(m: Optional[Mapping]) -> Mapping:
    return MappingProxyType(dict(m or {}))


@dataclass(frozen=True)
class Scenario:
    """One realized rollout parameterization."""

    params: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.params) < 1:
            raise RejectedInputError("scenario needs at least one parameter")
        if not 0 <= int(self.seed) < 2**64:
            raise RejectedInputError("seed must be a 64-bit unsigned integer")

    @property
    def dim(self) -> int:
        return len(self.params)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.params, dtype=float)[None, :]


@dataclass(frozen=True)
class OutcomeFn:
    """Failure indicator with an optional continuous safety metric.

    Both callables are vectorized: they take an ``(n, d)`` parameter array and
    return a length-``n`` array. When ``metric`` is present the convention is
    failure iff ``metric > 0``.
    """

    binary: BatchFn
    metric: Optional[BatchFn] = None
    name: str = "f"

    def batch(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.binary(np.atleast_2d(x)), dtype=bool)

    def __call__(self, scenario: Scenario) -> int:
        return int(self.batch(scenario.as_array())[0])

    def metric_value(self, scenario: Scenario) -> float:
        if self.metric is None:
            raise RejectedInputError(f"outcome {self.name!r} has no continuous metric")
        return float(self.metric(scenario.as_array())[0])

    @classmethod
    def from_metric(cls, metric: BatchFn, name: str = "f") -> "OutcomeFn":
        return cls(binary=lambda x: np.asarray(metric(x)) > 0, metric=metric, name=name)

    @classmethod
    def constant(cls, value: int, name: str | None = None) -> "OutcomeFn":
        v = bool(value)
        return cls(
            binary=lambda x: np.full(np.atleast_2d(x).shape[0], v),
            name=name or f"const{int(v)}",
        )


@dataclass(frozen=True)
class ScenarioDistribution:
    """A sampler over scenario parameters plus, when known, its log density.

    ``sample(rng, n)`` returns an ``(n, dim)`` array; identical generator
    states give identical arrays. ``log_density`` maps ``(n, dim)`` to ``n``
    values (``-inf`` off the support). ``params`` carries the bed-specific
    description (mean, slip probability, ...) used by exact oracles.
    """

    dim: int
    sample: Callable[[np.random.Generator, int], np.ndarray]
    log_density: Optional[BatchFn] = None
    label: str = "true"
    bed_id: str = ""
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise RejectedInputError("distribution dimension must be >= 1")
        object.__setattr__(self, "params", _frozen_map(self.params))

    @property
    def has_density(self) -> bool:
        return self.log_density is not None

    def density(self, x: np.ndarray) -> np.ndarray:
        if self.log_density is None:
            raise RejectedInputError(f"distribution {self.label!r} has no evaluable density")
        return np.exp(self.log_density(np.atleast_2d(x)))

    def scenarios(self, seed: int, n: int) -> list[Scenario]:
        """Draw ``n`` scenarios from a fresh stream seeded by ``seed``."""
        rng = np.random.default_rng(seed)
        x = self.sample(rng, n)
        return [Scenario(tuple(float(v) for v in row), seed) for row in x]


@dataclass(frozen=True)
class RiskEstimate:
    point: float
    upper_bound: float
    confidence: float
    method: Method
    n_samples: int
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "diagnostics", _frozen_map(self.diagnostics))
        if not 0.0 < self.confidence < 1.0:
            raise RejectedInputError(f"confidence must lie in (0, 1), got {self.confidence}")
        if self.n_samples < 1:
            raise RejectedInputError("n_samples must be positive")
        if not 0.0 <= self.point <= 1.0:
            raise RejectedInputError(f"point estimate {self.point} outside [0, 1]")
        if math.isfinite(self.upper_bound) and self.point > self.upper_bound:
            raise RejectedInputError("point estimate exceeds its upper bound")

    @property
    def width(self) -> float:
        """Upper bound minus point: the statistical error term at ``confidence``."""
        return max(self.upper_bound - self.point, 0.0)

    def to_document(self) -> dict:
        diag = {k: v for k, v in self.diagnostics.items() if k != "trace"}
        return {
            "point": float(self.point),
            "upper_bound": float(self.upper_bound),
            "confidence": float(self.confidence),
            "method": self.method.value,
            "n_samples": int(self.n_samples),
            "diagnostics": _plain(diag),
        }

    @classmethod
    def from_document(cls, doc: Mapping) -> "RiskEstimate":
        return cls(
            point=float(doc["point"]),
            upper_bound=float(doc["upper_bound"]),
            confidence=float(doc["confidence"]),
            method=Method(doc["method"]),
            n_samples=int(doc["n_samples"]),
            diagnostics=dict(doc.get("diagnostics", {})),
        )


@dataclass(frozen=True)
class BoundedTerm:
    """A nonnegative error bound together with how and how surely it was obtained."""

    value: float
    confidence: float
    method: str

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise RejectedInputError(f"error term ({self.method}) is not finite")
        if self.value < 0:
            raise RejectedInputError(f"error term ({self.method}) is negative")
        if not 0.0 < self.confidence <= 1.0:
            raise RejectedInputError(f"term confidence must lie in (0, 1], got {self.confidence}")

    def to_document(self) -> dict:
        return {"value": float(self.value), "confidence": float(self.confidence), "method": self.method}

    @classmethod
    def from_document(cls, doc: Mapping) -> "BoundedTerm":
        return cls(float(doc["value"]), float(doc["confidence"]), str(doc["method"]))


@dataclass(frozen=True)
class ErrorLedger:
    """Empirical tail estimate plus the statistical, system-gap and environment-gap terms."""

    empirical: RiskEstimate
    err_E: BoundedTerm
    err_phi: BoundedTerm
    err_pi: BoundedTerm

    def terms(self) -> tuple[float, float, float, float]:
        return (self.empirical.point, self.err_E.value, self.err_phi.value, self.err_pi.value)

    def confidences(self) -> list[float]:
        return [self.err_E.confidence, self.err_phi.confidence, self.err_pi.confidence]

    def to_document(self) -> dict:
        return {
            "empirical": self.empirical.to_document(),
            "err_E": self.err_E.to_document(),
            "err_phi": self.err_phi.to_document(),
            "err_pi": self.err_pi.to_document(),
        }

    @classmethod
    def from_document(cls, doc: Mapping) -> "ErrorLedger":
        return cls(
            empirical=RiskEstimate.from_document(doc["empirical"]),
            err_E=BoundedTerm.from_document(doc["err_E"]),
            err_phi=BoundedTerm.from_document(doc["err_phi"]),
            err_pi=BoundedTerm.from_document(doc["err_pi"]),
        )

    def dumps(self) -> str:
        return canonical.dumps(self.to_document())


@dataclass(frozen=True)
class Certificate:
    theta: float
    ledger: ErrorLedger
    total: float
    joint_confidence: float
    verdict: Verdict
    region_report: Optional[Mapping[str, Any]] = None
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def to_document(self) -> dict:
        return {
            "theta": float(self.theta),
            "ledger": self.ledger.to_document(),
            "total": float(self.total),
            "joint_confidence": float(self.joint_confidence),
            "verdict": Verdict(self.verdict).value,
            "region_report": _plain(self.region_report) if self.region_report is not None else None,
            "provenance": _plain(self.provenance),
        }

    def dumps(self) -> str:
        return canonical.dumps(self.to_document())

    @classmethod
    def from_document(cls, doc: Mapping) -> "Certificate":
        return cls(
            theta=float(doc["theta"]),
            ledger=ErrorLedger.from_document(doc["ledger"]),
            total=float(doc["total"]),
            joint_confidence=float(doc["joint_confidence"]),
            verdict=Verdict(doc["verdict"]),
            region_report=doc.get("region_report"),
            provenance=dict(doc.get("provenance", {})),
        )


def _plain(obj: Any) -> Any:
    """Convert mappings/arrays/enums into JSON-ready builtins."""
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def union_bound_confidence(confidences: Sequence[float]) -> float:
    """Bonferroni joint confidence ``max(0, 1 - sum(1 - c_i))``.

    Exact terms may pass confidence 1.0; they contribute nothing.
    """
    cs = list(confidences)
    if not cs:
        raise RejectedInputError("need at least one confidence")
    for c in cs:
        if not 0.0 < c <= 1.0:
            raise RejectedInputError(f"confidence {c} outside (0, 1]")
    return max(0.0, 1.0 - math.fsum(1.0 - c for c in cs))


def assemble_certificate(
    ledger: ErrorLedger,
    theta: float,
    region_report: Optional[Mapping[str, Any]] = None,
    provenance: Optional[Mapping[str, Any]] = None,
) -> Certificate:
    """Sum the ledger and compare against ``theta``; PASS iff the sum is strictly below."""
    if not (math.isfinite(theta) and 0.0 < theta <= 1.0):
        raise RejectedInputError(f"theta must lie in (0, 1], got {theta}")
    terms = ledger.terms()
    if not all(math.isfinite(t) for t in terms):
        raise RejectedInputError("ledger contains a non-finite term")
    total = math.fsum(terms)
    # the empirical point carries no probability statement of its own; its
    # sampling error is err_E, whose confidence is the estimator's
    joint = union_bound_confidence(ledger.confidences())
    verdict = Verdict.PASS if total < theta else Verdict.FAIL
    return Certificate(
        theta=float(theta),
        ledger=ledger,
        total=total,
        joint_confidence=joint,
        verdict=verdict,
        region_report=region_report,
        provenance=dict(provenance or {}),
    )
