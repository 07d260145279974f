"""Direct tail bounds from a continuous safety metric: scenario VaR and GEV block maxima."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from ppscert import streams
from ppscert.core import Method, RiskEstimate, ScenarioDistribution
from ppscert.errors import FitError, InsufficientDataError, RejectedInputError
from ppscert.estimators.base import EstimatorConfig

MIN_MAXIMA = 20
_ONE_MINUS = math.nextafter(1.0, 0.0)
# 5% critical value of A^2 for GEV with estimated parameters (moderate n)
AD_CRITICAL_5PCT = 0.757
_EULER = 0.5772156649015329


def var_scenario_bound(metric_samples, epsilon: float) -> tuple[float, float]:
    """Solution of the scalar scenario program ``min z s.t. z >= y_i``.

    Returns ``(zeta_star, confidence)`` with ``zeta_star = max(y_i)`` and
    ``confidence = 1 - (1 - epsilon)**N``: with that confidence the
    ``(1 - epsilon)``-quantile of ``Y`` lies at or below ``zeta_star``. When
    ``zeta_star <= 0`` this certifies ``P(Y > 0) <= epsilon``.
    """
    y = np.asarray(metric_samples, dtype=float).ravel()
    if y.size == 0:
        raise RejectedInputError("empty metric sample")
    if not 0.0 < epsilon < 1.0:
        raise RejectedInputError("epsilon must lie in (0, 1)")
    if np.isnan(y).any():
        raise RejectedInputError("metric sample contains NaN")
    return float(y.max()), -math.expm1(y.size * math.log1p(-epsilon))


def sample_metric(dist: ScenarioDistribution, metric, n: int, seed: int, stream: int = streams.STREAM_MAIN,
                  workers: int = 1) -> np.ndarray:
    def run(i, size, rng):
        return np.asarray(metric(dist.sample(rng, size)), dtype=float)

    return np.concatenate(streams.map_chunks(run, seed, n, stream, workers))


def var_estimate(dist: ScenarioDistribution, metric, cfg: EstimatorConfig, *, workers: int = 1,
                 stream: int = streams.STREAM_MAIN) -> RiskEstimate:
    """Scenario-VaR bound on ``P(metric > 0)`` from ``cfg.n`` draws at ``cfg.epsilon``."""
    y = sample_metric(dist, metric, int(cfg.n), cfg.seed, stream, workers)
    zeta, conf = var_scenario_bound(y, cfg.epsilon)
    k = int(np.count_nonzero(y > 0.0))
    certified = zeta <= 0.0
    return RiskEstimate(
        point=k / y.size,
        upper_bound=cfg.epsilon if certified else 1.0,
        # 1 - (1 - eps)^N rounds to 1.0 for large N; the exact value is in diagnostics
        confidence=min(conf, _ONE_MINUS),
        method=Method.VAR_SCENARIO,
        n_samples=int(y.size),
        diagnostics={
            "zeta_star": zeta,
            "epsilon": cfg.epsilon,
            "scenario_confidence": conf,
            "certified": certified,
            "k": k,
            "trace": [{"stage": 0, "estimate": k / y.size, "bound": cfg.epsilon if certified else 1.0,
                       "ess": float(y.size), "acceptance": ""}],
        },
    )


def block_maxima(values, block_size: int) -> np.ndarray:
    """Maxima over consecutive blocks; a trailing partial block is dropped."""
    v = np.asarray(values, dtype=float).ravel()
    if block_size < 2:
        raise RejectedInputError("block size must be >= 2")
    m = v.size // block_size
    return v[: m * block_size].reshape(m, block_size).max(axis=1)


@dataclass(frozen=True)
class GEVParams:
    """``G(x) = exp(-(1 + xi (x - loc)/scale)^(-1/xi))``; ``xi > 0`` is heavy tailed."""

    loc: float
    scale: float
    shape: float
    method: str = "pwm"

    @property
    def scipy_c(self) -> float:
        return -self.shape

    def frozen(self):
        return stats.genextreme(self.scipy_c, loc=self.loc, scale=self.scale)

    def cdf(self, x):
        return self.frozen().cdf(x)

    def sf(self, x):
        return self.frozen().sf(x)


@dataclass(frozen=True)
class GEVFit:
    params: GEVParams
    exceed_prob: float
    anderson_darling: float
    n_maxima: int
    warnings: tuple[str, ...] = field(default_factory=tuple)


def _pwm(x: np.ndarray) -> GEVParams:
    # Hosking, Wallis & Wood probability-weighted-moment estimators
    x = np.sort(x)
    n = x.size
    i = np.arange(n, dtype=float)
    b0 = x.mean()
    b1 = float(np.sum(i / (n - 1) * x) / n)
    b2 = float(np.sum(i * (i - 1) / ((n - 1) * (n - 2)) * x) / n)
    l2 = 2.0 * b1 - b0
    if not l2 > 0:
        raise FitError("block maxima have no spread; the GEV scale is not identifiable")
    c = l2 / (3.0 * b2 - b0) - math.log(2.0) / math.log(3.0)
    k = 7.8590 * c + 2.9554 * c * c
    if abs(k) < 1e-8:
        scale = l2 / math.log(2.0)
        loc = b0 - _EULER * scale
    else:
        g = math.gamma(1.0 + k)
        scale = l2 * k / (g * (1.0 - 2.0 ** (-k)))
        loc = b0 + scale * (g - 1.0) / k
    return GEVParams(loc=float(loc), scale=float(scale), shape=float(-k), method="pwm")


def _mle(x: np.ndarray, start: GEVParams) -> GEVParams:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        c, loc, scale = stats.genextreme.fit(x, start.scipy_c, loc=start.loc, scale=start.scale)
    return GEVParams(loc=float(loc), scale=float(scale), shape=float(-c), method="mle")


def anderson_darling(x, cdf) -> float:
    """``A^2 = -n - (1/n) sum (2i - 1) [ln F(x_(i)) + ln(1 - F(x_(n+1-i)))]``."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    u = np.clip(cdf(x), 1e-300, 1.0 - 1e-16)
    i = np.arange(1, n + 1)
    return float(-n - np.sum((2 * i - 1) * (np.log(u) + np.log1p(-u[::-1]))) / n)


def gev_tail_fit(block_maxima_values, cfg: Optional[EstimatorConfig] = None) -> GEVFit:
    """Fit a GEV to block maxima and return ``1 - G(0)`` with fit diagnostics.

    PWM by default; ``cfg.gev_method == "mle"`` refines the PWM fit by
    maximum likelihood.
    """
    cfg = cfg or EstimatorConfig()
    x = np.asarray(block_maxima_values, dtype=float).ravel()
    if x.size < MIN_MAXIMA:
        raise InsufficientDataError(f"GEV fit needs at least {MIN_MAXIMA} block maxima, got {x.size}")
    if not np.isfinite(x).all():
        raise FitError("block maxima contain non-finite values")
    params = _pwm(x)
    if cfg.gev_method == "mle":
        params = _mle(x, params)
    if not all(math.isfinite(v) for v in (params.loc, params.scale, params.shape)) or params.scale <= 0:
        raise FitError(f"non-finite or degenerate GEV fit: {params}")
    p = float(params.sf(0.0))
    if not math.isfinite(p):
        raise FitError("GEV exceedance probability is not finite")
    ad = anderson_darling(x, params.cdf)
    notes = []
    if params.shape > 0.5:
        notes.append(f"shape {params.shape:.3f} > 0.5: very heavy tail, the extrapolated exceedance is unstable")
    if params.shape < 0:
        upper_end = params.loc - params.scale / params.shape
        if upper_end < 0.0:
            notes.append(f"fitted upper endpoint {upper_end:.4g} < 0: exceedance is exactly 0 under the fit")
    if ad > AD_CRITICAL_5PCT:
        notes.append(f"Anderson-Darling {ad:.3f} exceeds the 5% critical value {AD_CRITICAL_5PCT}: GEV misfit")
    return GEVFit(params=params, exceed_prob=p, anderson_darling=ad, n_maxima=int(x.size), warnings=tuple(notes))


def per_sample_probability(block_prob: float, block_size: int) -> float:
    """Invert ``P(block max > 0) = 1 - (1 - p)^B`` for the per-draw probability ``p``."""
    if block_prob >= 1.0:
        return 1.0
    return -math.expm1(math.log1p(-block_prob) / block_size)


def gev_estimate(dist: ScenarioDistribution, metric, cfg: EstimatorConfig, *, workers: int = 1,
                 stream: int = streams.STREAM_MAIN, bootstrap: int = 200) -> RiskEstimate:
    """Per-scenario failure probability from a GEV fit to block maxima of ``metric``.

    The upper bound is a nonparametric bootstrap percentile over refits; it
    is an approximation, not a certified bound, and is labeled as such.
    """
    y = sample_metric(dist, metric, int(cfg.n), cfg.seed, stream, workers)
    maxima = block_maxima(y, cfg.block_size)
    fit = gev_tail_fit(maxima, cfg)
    point = per_sample_probability(fit.exceed_prob, cfg.block_size)
    rng = streams.generator(cfg.seed, streams.STREAM_REPLICATION, 0)
    boots = []
    for _ in range(bootstrap):
        resample = maxima[rng.integers(0, maxima.size, maxima.size)]
        try:
            boots.append(per_sample_probability(gev_tail_fit(resample, cfg).exceed_prob, cfg.block_size))
        except FitError:
            continue
    upper = float(np.quantile(boots, cfg.confidence)) if boots else 1.0
    return RiskEstimate(
        point=point,
        upper_bound=min(max(upper, point), 1.0),
        confidence=cfg.confidence,
        method=Method.GEV,
        n_samples=int(y.size),
        diagnostics={
            "loc": fit.params.loc,
            "scale": fit.params.scale,
            "shape": fit.params.shape,
            "fit_method": fit.params.method,
            "block_size": cfg.block_size,
            "n_maxima": fit.n_maxima,
            "block_exceedance": fit.exceed_prob,
            "anderson_darling": fit.anderson_darling,
            "warnings": list(fit.warnings),
            "bootstrap_refits": len(boots),
            "bound_kind": "bootstrap percentile (approximate; not certified)",
            "empirical_k": int(np.count_nonzero(y > 0.0)),
            "trace": [{"stage": 0, "estimate": point, "bound": min(max(upper, point), 1.0), "ess": float(fit.n_maxima),
                       "acceptance": ""}],
        },
    )
