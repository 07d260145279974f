"""Subset simulation: a small failure probability as a product of conditional
probabilities, each estimated by Markov chains confined to the previous level."""
from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np

from ppscert import streams
from ppscert.core import Method, RiskEstimate, ScenarioDistribution
from ppscert.errors import DegenerateChainError, RejectedInputError
from ppscert.estimators.base import EstimatorConfig
from ppscert.estimators.binomial import z_quantile
from ppscert.estimators.mcmc import adapt_scale, conditional_move

Metric = Callable[[np.ndarray], np.ndarray]


def initial_level(dist: ScenarioDistribution, metric: Metric, n: int, seed: int, stream: int, workers: int = 1):
    """Plain Monte Carlo draws and metric values; the same stream as ``cmc_estimate``."""

    def run(i, size, rng):
        x = dist.sample(rng, size)
        return x, np.asarray(metric(x), dtype=float)

    parts = streams.map_chunks(run, seed, n, stream, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def chain_correlation(indicator: np.ndarray) -> float:
    """Correlation factor gamma of a level's estimator from chains shaped (chains, length)."""
    nc, ns = indicator.shape
    p = indicator.mean()
    r0 = p * (1.0 - p)
    if ns < 2 or r0 <= 0:
        return 0.0
    ind = indicator.astype(float)
    gamma = 0.0
    for k in range(1, ns):
        rk = np.mean(ind[:, : ns - k] * ind[:, k:]) - p * p
        gamma += (1.0 - k / ns) * rk / r0
    return max(2.0 * gamma, 0.0)


def subset_simulation(
    dist: ScenarioDistribution,
    metric: Metric,
    cfg: EstimatorConfig,
    *,
    workers: int = 1,
    stream: int = streams.STREAM_MAIN,
) -> RiskEstimate:
    """Estimate ``P(metric(X) > 0)``.

    Each level keeps the ``n * rho`` largest metric values as seeds; the
    threshold is the smallest kept value and the next level is the set
    ``metric >= threshold``. Thresholds are actual sample values and the
    level sets are only ever compared, so the estimate is unchanged by any
    strictly increasing transform of the metric that fixes zero.
    """
    if dist.log_density is None:
        raise RejectedInputError("subset simulation needs an evaluable density for its Markov moves")
    n, rho = int(cfg.n), float(cfg.rho)
    n_seeds = int(round(n * rho))
    chain_len = int(round(1.0 / rho))
    if n_seeds < 1 or abs(n_seeds - n * rho) > 1e-9 or abs(chain_len - 1.0 / rho) > 1e-9 or n_seeds * chain_len != n:
        raise RejectedInputError("n * rho and 1 / rho must be integers")

    x, y = initial_level(dist, metric, n, cfg.seed, stream, workers)
    total = n
    evaluations = n
    thresholds: list[float] = []
    probs: list[float] = []
    acceptance: list[float] = []
    cov2: list[float] = []
    trace = []
    chains_shape = None
    # proposal sd relative to the seeds' per-coordinate spread; the level
    # constraint rejects short steps rarely, so start wide
    scale = 2.0

    for level in range(cfg.max_levels):
        order = np.argsort(-y, kind="stable")
        b = float(y[order[n_seeds - 1]])
        if b > 0.0:
            k = int(np.count_nonzero(y > 0.0))
            p_last = k / n
            probs.append(p_last)
            gamma = chain_correlation((y > 0.0).reshape(chains_shape).T) if chains_shape else 0.0
            cov2.append((1.0 - p_last) / (p_last * n) * (1.0 + gamma))
            trace.append({"stage": level, "estimate": float(np.prod(probs)), "bound": "", "ess": "", "acceptance": "",
                          "threshold": 0.0})
            break
        gamma = chain_correlation((y >= b).reshape(chains_shape).T) if chains_shape else 0.0
        thresholds.append(b)
        probs.append(rho)
        cov2.append((1.0 - rho) / (rho * n) * (1.0 + gamma))

        seeds, seeds_y = x[order[:n_seeds]], y[order[:n_seeds]]
        spread = np.maximum(seeds.std(axis=0), 1e-12)
        rng = streams.generator(cfg.seed, stream, 1_000 + level)
        states, values = [seeds], [seeds_y]
        cur, cur_y = seeds, seeds_y
        moved_total = 0
        for _ in range(chain_len - 1):
            cur, cur_y, moved, n_eval = conditional_move(cur, cur_y, dist, metric, b, scale * spread, rng)
            evaluations += n_eval
            moved_total += int(moved.sum())
            scale = adapt_scale(scale, float(moved.mean()))
            states.append(cur)
            values.append(cur_y)
        acc = moved_total / max(n_seeds * (chain_len - 1), 1)
        acceptance.append(acc)
        trace.append({"stage": level, "estimate": float(np.prod(probs)), "bound": "", "ess": "",
                      "acceptance": acc, "threshold": b})
        if chain_len > 1 and acc < cfg.min_acceptance:
            raise DegenerateChainError(f"level {level}: acceptance {acc:.4f} below {cfg.min_acceptance}")
        x = np.concatenate(states)
        y = np.concatenate(values)
        chains_shape = (chain_len, n_seeds)
        total += n_seeds * (chain_len - 1)
    else:
        raise DegenerateChainError(f"failure domain not reached within {cfg.max_levels} levels")

    point = float(math.prod(probs))
    delta = math.sqrt(math.fsum(cov2)) if point > 0 else float("inf")
    z = z_quantile(cfg.confidence)
    if point > 0:
        upper = min(1.0, point * math.exp(z * delta))
        lo95, hi95 = point * math.exp(-1.959963984540054 * delta), point * math.exp(1.959963984540054 * delta)
    else:
        upper, lo95, hi95 = 1.0, 0.0, 1.0
    return RiskEstimate(
        point=point,
        upper_bound=max(upper, point),
        confidence=cfg.confidence,
        method=Method.SUBSET,
        n_samples=total,
        diagnostics={
            "levels": len(probs),
            "thresholds": thresholds,
            "conditional_probabilities": probs,
            "acceptance": acceptance,
            "cov": delta,
            "interval95": [lo95, min(hi95, 1.0)],
            "metric_evaluations": evaluations,
            "bound_kind": "asymptotic (lognormal, chain-correlation adjusted)",
            "trace": trace,
        },
    )
