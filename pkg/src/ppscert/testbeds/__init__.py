"""Exactly analyzable testbeds and the oracle / perturbation entry points."""
from __future__ import annotations

from typing import Mapping, Optional

from ppscert.core import ScenarioDistribution
from ppscert.errors import RejectedInputError, UnsupportedOracleError
from ppscert.testbeds.carfollowing import CarFollowingBed
from ppscert.testbeds.gaussian import GaussianThresholdBed, normal_sf
from ppscert.testbeds.gridworld import GridWorldBed

BEDS = {
    GaussianThresholdBed.bed_id: GaussianThresholdBed,
    CarFollowingBed.bed_id: CarFollowingBed,
    GridWorldBed.bed_id: GridWorldBed,
}

__all__ = [
    "BEDS",
    "CarFollowingBed",
    "GaussianThresholdBed",
    "GridWorldBed",
    "make_bed",
    "normal_sf",
    "proposal",
    "split_knob",
    "surrogate",
    "truth_oracle",
]


def make_bed(bed_id: str, params: Optional[Mapping] = None):
    try:
        cls = BEDS[bed_id]
    except KeyError:
        raise RejectedInputError(f"unknown testbed {bed_id!r}; choose from {sorted(BEDS)}") from None
    params = dict(params or {})
    if cls is GridWorldBed and "hazard_cells" in params:
        params["hazard_cells"] = frozenset(tuple(rc) for rc in params["hazard_cells"])
    for key in ("onset_range", "decel_shape"):
        if key in params:
            params[key] = tuple(params[key])
    return cls(**params)


def truth_oracle(bed, dist: ScenarioDistribution, region=None) -> float:
    """Ground-truth failure probability of ``bed`` under ``dist``.

    With a certified ``region`` the value is the tail risk ``E[f; x not in region]``.
    """
    fn = getattr(bed, "truth", None)
    if fn is None:
        raise UnsupportedOracleError(f"{type(bed).__name__} has no exact mode")
    return float(fn(dist, region))


def surrogate(bed, knob: Optional[Mapping] = None) -> ScenarioDistribution:
    """Controlled sim-to-real perturbation of ``bed``'s scenario law."""
    return bed.surrogate(knob)


def proposal(bed, descriptor: Optional[Mapping] = None) -> ScenarioDistribution:
    return bed.proposal(descriptor)


def split_knob(bed, knob: Optional[Mapping]) -> tuple[dict, dict]:
    """Separate a perturbation into its environment part and its system part."""
    knob = dict(knob or {})
    pi = {k: v for k, v in knob.items() if k in bed.PI_KNOBS}
    phi = {k: v for k, v in knob.items() if k in bed.PHI_KNOBS}
    unknown = set(knob) - set(pi) - set(phi)
    if unknown:
        raise RejectedInputError(f"unknown knobs for {bed.bed_id}: {sorted(unknown)}")
    return pi, phi
