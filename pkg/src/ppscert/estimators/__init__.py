"""Upper-bound estimators for the statistical tail term."""
from ppscert.estimators.base import BOUNDS, EstimatorConfig
from ppscert.estimators.binomial import (
    clopper_pearson_upper,
    clt_error_bound,
    clt_error_from_counts,
    hoeffding_upper,
    upper_bound,
    z_quantile,
)
from ppscert.estimators.sampling import cmc_estimate, importance_sampling, sample_outcomes
from ppscert.estimators.dispatch import run_estimator
from ppscert.estimators.splitting import splitting_estimate
from ppscert.estimators.subset import subset_simulation
from ppscert.estimators.tail import (
    GEVFit,
    GEVParams,
    block_maxima,
    gev_estimate,
    gev_tail_fit,
    per_sample_probability,
    var_estimate,
    var_scenario_bound,
)

__all__ = [
    "BOUNDS",
    "EstimatorConfig",
    "GEVFit",
    "GEVParams",
    "block_maxima",
    "clopper_pearson_upper",
    "clt_error_bound",
    "clt_error_from_counts",
    "cmc_estimate",
    "gev_estimate",
    "gev_tail_fit",
    "hoeffding_upper",
    "importance_sampling",
    "per_sample_probability",
    "run_estimator",
    "sample_outcomes",
    "splitting_estimate",
    "subset_simulation",
    "upper_bound",
    "var_estimate",
    "var_scenario_bound",
    "z_quantile",
]
