"""Crude Monte Carlo and importance sampling with chunked, worker-invariant streams."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ppscert import streams
from ppscert.core import Method, OutcomeFn, RiskEstimate, ScenarioDistribution
from ppscert.errors import DominationError, RejectedInputError
from ppscert.estimators.base import EstimatorConfig
from ppscert.estimators.binomial import clopper_pearson_upper, upper_bound, z_quantile


def cmc_estimate(
    dist: ScenarioDistribution,
    f: OutcomeFn,
    cfg: EstimatorConfig,
    *,
    workers: int = 1,
    stream: int = streams.STREAM_MAIN,
) -> RiskEstimate:
    """Point estimate ``k/n`` over ``cfg.n`` independent draws, with the
    ``cfg.bound`` upper confidence bound at ``cfg.confidence``."""

    def run(i: int, size: int, rng: np.random.Generator) -> int:
        return int(np.count_nonzero(f.batch(dist.sample(rng, size))))

    counts = streams.map_chunks(run, cfg.seed, cfg.n, stream, workers)
    n = int(cfg.n)
    k = sum(counts)
    trace = []
    seen = hits = 0
    for i, (size, c) in enumerate(zip(streams.chunk_sizes(n), counts)):
        seen += size
        hits += c
        trace.append({
            "stage": i,
            "estimate": hits / seen,
            "bound": upper_bound(hits, seen, cfg.confidence, cfg.bound),
            "ess": float(seen),
            "acceptance": "",
        })
    return RiskEstimate(
        point=k / n,
        upper_bound=upper_bound(k, n, cfg.confidence, cfg.bound),
        confidence=cfg.confidence,
        method=Method.CMC,
        n_samples=n,
        diagnostics={"k": k, "bound": cfg.bound, "trace": trace},
    )


def _weights(dist: ScenarioDistribution, proposal: ScenarioDistribution, x: np.ndarray, fail: np.ndarray) -> np.ndarray:
    lp = dist.log_density(x)
    lq = proposal.log_density(x)
    bad = fail & ~np.isfinite(lq)
    if np.any(bad):
        raise DominationError(
            f"proposal density vanishes at {int(bad.sum())} sampled failure point(s); "
            "it does not dominate the target on the failure set"
        )
    with np.errstate(invalid="ignore", over="ignore"):
        w = np.exp(lp - lq)
    # identical log densities must give weight exactly one (bit-exact CMC reduction)
    w = np.where(lp == lq, 1.0, w)
    w = np.where(np.isneginf(lp), 0.0, w)
    if np.any(fail & ~np.isfinite(w)):
        raise DominationError("non-finite importance weight at a failure point")
    return w


def importance_sampling(
    dist: ScenarioDistribution,
    proposal: ScenarioDistribution,
    f: OutcomeFn,
    cfg: EstimatorConfig,
    *,
    workers: int = 1,
    stream: int = streams.STREAM_MAIN,
) -> RiskEstimate:
    """Likelihood-ratio estimate ``mean(f * p/q)`` with draws from ``proposal``.

    The upper bound applies the CLT to the weighted terms. When no failure is
    observed the terms have zero variance and the bound falls back to the
    Clopper-Pearson ``k = 0`` bound scaled by the largest observed weight
    (a heuristic, flagged in the diagnostics).
    """
    if dist.log_density is None or proposal.log_density is None:
        raise RejectedInputError("importance sampling needs evaluable target and proposal densities")
    if dist.dim != proposal.dim:
        raise RejectedInputError("target and proposal dimensions differ")

    def run(i: int, size: int, rng: np.random.Generator):
        x = proposal.sample(rng, size)
        fail = f.batch(x)
        w = _weights(dist, proposal, x, fail)
        t = np.where(fail, w, 0.0)
        return (
            math.fsum(t), math.fsum(t * t), math.fsum(w), math.fsum(w * w),
            int(fail.sum()), float(w.max(initial=0.0)),
            float(w[fail].min(initial=np.inf)), float(w[fail].max(initial=0.0)),
        )

    parts = streams.map_chunks(run, cfg.seed, cfg.n, stream, workers)
    n = int(cfg.n)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    sw = math.fsum(p[2] for p in parts)
    sww = math.fsum(p[3] for p in parts)
    k = sum(p[4] for p in parts)
    w_max = max(p[5] for p in parts)
    point = s1 / n
    var = max(s2 / n - point * point, 0.0)
    if n > 1:
        var *= n / (n - 1)
    ess = sw * sw / sww if sww > 0 else 0.0
    diagnostics = {
        "k": k,
        "ess": ess,
        "weight_max": w_max,
        "failure_weight_min": min(p[6] for p in parts),
        "failure_weight_max": max(p[7] for p in parts),
        "term_sd": math.sqrt(var),
    }
    if k == 0:
        upper = clopper_pearson_upper(0, n, cfg.confidence) * max(1.0, w_max)
        diagnostics["bound_kind"] = "zero-failure fallback (heuristic)"
    else:
        upper = point + z_quantile(cfg.confidence) * math.sqrt(var / n)
        diagnostics["bound_kind"] = "clt"
    point = min(point, 1.0)
    diagnostics["trace"] = [{"stage": 0, "estimate": point, "bound": min(upper, 1.0), "ess": ess, "acceptance": ""}]
    return RiskEstimate(
        point=point,
        upper_bound=max(min(upper, 1.0), point),
        confidence=cfg.confidence,
        method=Method.IS,
        n_samples=n,
        diagnostics=diagnostics,
    )


def sample_outcomes(
    dist: ScenarioDistribution,
    f: OutcomeFn,
    n: int,
    seed: int,
    stream: int = streams.STREAM_MAIN,
    metric: Optional[bool] = False,
) -> np.ndarray:
    """Raw outcome (or metric) values in chunk order; used by VaR/GEV and tests."""

    def run(i: int, size: int, rng: np.random.Generator) -> np.ndarray:
        x = dist.sample(rng, size)
        return np.asarray(f.metric(x), dtype=float) if metric else f.batch(x)

    return np.concatenate(streams.map_chunks(run, seed, n, stream))
