"""Run any estimator by its method tag."""
from __future__ import annotations

from typing import Optional

from ppscert import streams
from ppscert.core import Method, OutcomeFn, RiskEstimate, ScenarioDistribution
from ppscert.errors import RejectedInputError
from ppscert.estimators.base import EstimatorConfig
from ppscert.estimators.sampling import cmc_estimate, importance_sampling
from ppscert.estimators.splitting import splitting_estimate
from ppscert.estimators.subset import subset_simulation
from ppscert.estimators.tail import gev_estimate, var_estimate


def run_estimator(
    method: Method | str,
    dist: ScenarioDistribution,
    f: OutcomeFn,
    cfg: EstimatorConfig,
    *,
    proposal: Optional[ScenarioDistribution] = None,
    workers: int = 1,
    stream: int = streams.STREAM_MAIN,
) -> RiskEstimate:
    try:
        method = Method(str(method).upper() if not isinstance(method, Method) else method)
    except ValueError:
        raise RejectedInputError(f"unknown method {method!r}; choose from {[m.value for m in Method]}") from None
    if method is Method.CMC:
        return cmc_estimate(dist, f, cfg, workers=workers, stream=stream)
    if method is Method.IS:
        if proposal is None:
            raise RejectedInputError("importance sampling needs a proposal distribution")
        return importance_sampling(dist, proposal, f, cfg, workers=workers, stream=stream)
    if f.metric is None:
        raise RejectedInputError(f"{method.value} needs a continuous metric on the outcome")
    if method is Method.SUBSET:
        return subset_simulation(dist, f.metric, cfg, workers=workers, stream=stream)
    if method is Method.SPLITTING:
        return splitting_estimate(dist, f.metric, cfg, workers=workers, stream=stream)
    if method is Method.VAR_SCENARIO:
        return var_estimate(dist, f.metric, cfg, workers=workers, stream=stream)
    return gev_estimate(dist, f.metric, cfg, workers=workers, stream=stream)
