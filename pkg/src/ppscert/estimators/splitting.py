"""Multilevel splitting with a fixed offspring count per level crossing."""
from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np

from ppscert import streams
from ppscert.core import Method, RiskEstimate, ScenarioDistribution
from ppscert.errors import DegenerateChainError, RejectedInputError
from ppscert.estimators.base import EstimatorConfig
from ppscert.estimators.binomial import clopper_pearson_upper, z_quantile
from ppscert.estimators.mcmc import adapt_scale, conditional_move
from ppscert.estimators.subset import initial_level, subset_simulation

Metric = Callable[[np.ndarray], np.ndarray]

# population cap relative to n; a badly placed level otherwise grows it geometrically
MAX_GROWTH = 50


def pilot_levels(dist: ScenarioDistribution, metric: Metric, cfg: EstimatorConfig, workers: int = 1) -> tuple[float, ...]:
    """Intermediate thresholds from a subset-simulation pilot with ``rho = 1/factor``.

    The pilot runs on its own stream so it never shares draws with the main run.
    """
    s = int(cfg.factor)
    if s < 2:
        return ()
    n = max(int(cfg.n) // s * s, s)
    pilot = subset_simulation(dist, metric, cfg.with_(n=n, rho=1.0 / s), workers=workers, stream=streams.STREAM_PILOT)
    return tuple(t for t in pilot.diagnostics["thresholds"] if t < 0.0)


def splitting_estimate(
    dist: ScenarioDistribution,
    metric: Metric,
    cfg: EstimatorConfig,
    *,
    workers: int = 1,
    stream: int = streams.STREAM_MAIN,
) -> RiskEstimate:
    """Fixed-effort generalized splitting estimate of ``P(metric(X) > 0)``.

    ``n`` roots are drawn from ``dist``. At each intermediate level ``g`` the
    states with ``metric >= g`` survive, and every survivor is replaced by
    ``factor`` states of a Markov chain that leaves ``dist`` restricted to the
    level set invariant (``cfg.moves`` conditional moves between states). The
    final level is ``metric > 0``. With ``m`` levels in total the estimate
    ``hits / (n * factor**(m - 1))`` is unbiased; its spread is computed from
    the per-root descendant counts, which are independent.
    """
    if dist.log_density is None:
        raise RejectedInputError("splitting needs an evaluable density for its Markov moves")
    s = int(cfg.factor)
    levels = tuple(cfg.levels) if cfg.levels is not None else pilot_levels(dist, metric, cfg, workers)
    if any(b >= 0.0 for b in levels) or any(b2 <= b1 for b1, b2 in zip(levels, levels[1:])):
        raise RejectedInputError("intermediate levels must be negative and strictly increasing")

    n = int(cfg.n)
    x, y = initial_level(dist, metric, n, cfg.seed, stream, workers)
    root = np.arange(n)
    total = n
    evaluations = n
    scale = 2.0
    acceptance: list[float] = []
    fractions: list[float] = []
    trace = []

    for level, b in enumerate(levels):
        keep = y >= b
        fractions.append(float(keep.mean()) if y.size else 0.0)
        x, y, root = x[keep], y[keep], root[keep]
        running = x.shape[0] / (n * float(s) ** level)
        trace.append({"stage": level, "estimate": running, "bound": "", "ess": float(x.shape[0]),
                      "acceptance": acceptance[-1] if acceptance else "", "threshold": b})
        if x.shape[0] == 0:
            break
        if x.shape[0] * s > MAX_GROWTH * n:
            raise DegenerateChainError(
                f"level {level}: population would grow to {x.shape[0] * s}; levels are too far apart for factor {s}"
            )
        spread = np.maximum(x.std(axis=0), 1e-12) if x.shape[0] > 1 else np.ones(x.shape[1])
        rng = streams.generator(cfg.seed, stream, 2_000 + level)
        states, values = [x], [y]
        cur, cur_y = x, y
        moved_total = steps = 0
        for _ in range(s - 1):
            for _ in range(int(cfg.moves)):
                cur, cur_y, moved, n_eval = conditional_move(cur, cur_y, dist, metric, b, scale * spread, rng)
                evaluations += n_eval
                moved_total += int(moved.sum())
                steps += cur.shape[0]
                scale = adapt_scale(scale, float(moved.mean()))
            states.append(cur)
            values.append(cur_y)
        acc = moved_total / steps if steps else 1.0
        acceptance.append(acc)
        if steps and acc < cfg.min_acceptance:
            raise DegenerateChainError(f"level {level}: acceptance {acc:.4f} below {cfg.min_acceptance}")
        total += x.shape[0] * (s - 1)
        x = np.concatenate(states)
        y = np.concatenate(values)
        root = np.tile(root, s)

    m = len(levels) + 1
    hit = y > 0.0
    if x.shape[0]:
        fractions.append(float(hit.mean()))
    norm = float(s) ** (m - 1)
    z_i = np.bincount(root[hit], minlength=n) / norm
    point = math.fsum(z_i) / n
    sd = float(z_i.std(ddof=1)) if n > 1 else 0.0
    z = z_quantile(cfg.confidence)
    diagnostics = {
        "levels": list(levels),
        "factor": s,
        "moves": int(cfg.moves),
        "survivor_fractions": fractions,
        "acceptance": acceptance,
        "hits": int(hit.sum()),
        "metric_evaluations": evaluations,
    }
    if hit.any():
        half = 1.959963984540054 * sd / math.sqrt(n)
        upper = point + z * sd / math.sqrt(n)
        diagnostics["interval95"] = [max(point - half, 0.0), min(point + half, 1.0)]
        diagnostics["bound_kind"] = "clt over per-root descendant counts"
    else:
        # a failing root clears every negative level and its own state is kept
        # at each split, so no hits means none of the n plain roots failed
        upper = clopper_pearson_upper(0, n, cfg.confidence)
        diagnostics["interval95"] = [0.0, upper]
        diagnostics["bound_kind"] = "zero-hit fallback (Clopper-Pearson on the roots)"
    trace.append({"stage": m - 1, "estimate": point, "bound": min(upper, 1.0), "ess": float(hit.sum()),
                  "acceptance": acceptance[-1] if acceptance else "", "threshold": 0.0})
    diagnostics["trace"] = trace
    return RiskEstimate(
        point=min(point, 1.0),
        upper_bound=max(min(upper, 1.0), min(point, 1.0)),
        confidence=cfg.confidence,
        method=Method.SPLITTING,
        n_samples=total,
        diagnostics=diagnostics,
    )
