"""One-sided upper confidence bounds on a failure probability from k failures in n trials."""
from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
from scipy import special, stats

from ppscert.errors import RejectedInputError


def _check(k: int, n: int, confidence: float) -> None:
    if n < 1:
        raise RejectedInputError(f"n must be >= 1, got {n}")
    if not 0 <= k <= n:
        raise RejectedInputError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < confidence < 1.0:
        raise RejectedInputError(f"confidence must lie in (0, 1), got {confidence}")


def z_quantile(confidence: float) -> float:
    """One-sided standard-normal quantile, e.g. 1.6449 at 0.95."""
    return float(stats.norm.ppf(confidence))


def clopper_pearson_upper(k: int, n: int, confidence: float = 0.95) -> float:
    """Exact one-sided binomial upper bound.

    The ``confidence``-quantile of Beta(k + 1, n - k); for ``k = 0`` this is
    ``1 - (1 - confidence)**(1/n)``, for ``k = n`` it is 1.
    """
    _check(k, n, confidence)
    if k == n:
        return 1.0
    if k == 0:
        # -expm1(log(alpha)/n) keeps precision when n is large
        return -math.expm1(math.log1p(-confidence) / n)
    return float(special.betaincinv(k + 1, n - k, confidence))


def hoeffding_upper(k: int, n: int, confidence: float = 0.95) -> float:
    """``k/n + sqrt(ln(1/(1 - confidence)) / (2n))``, clamped to 1."""
    _check(k, n, confidence)
    return min(1.0, k / n + math.sqrt(-math.log1p(-confidence) / (2.0 * n)))


def clt_error_bound(samples: Sequence[int] | np.ndarray, confidence: float = 0.95, min_n: int = 30) -> float:
    """Statistical error term from binary samples: ``z * sd / sqrt(n)``.

    ``sd`` is the plug-in Bernoulli standard deviation ``sqrt(p(1 - p))``. With
    no failures, all failures, or fewer than ``min_n`` samples the normal
    approximation is meaningless and the Clopper-Pearson width
    ``upper - k/n`` is returned instead.
    """
    x = np.asarray(samples)
    if x.size == 0:
        raise RejectedInputError("empty sample")
    n = int(x.size)
    k = int(np.count_nonzero(x))
    return clt_error_from_counts(k, n, confidence, min_n)


def clt_error_from_counts(k: int, n: int, confidence: float = 0.95, min_n: int = 30) -> float:
    _check(k, n, confidence)
    p = k / n
    if n < min_n or k == 0 or k == n:
        return clopper_pearson_upper(k, n, confidence) - p
    return z_quantile(confidence) * math.sqrt(p * (1.0 - p) / n)


def upper_bound(k: int, n: int, confidence: float, kind: str = "clopper_pearson") -> float:
    """Dispatch on the bound name used in configs."""
    if kind == "clopper_pearson":
        return clopper_pearson_upper(k, n, confidence)
    if kind == "hoeffding":
        return hoeffding_upper(k, n, confidence)
    if kind == "clt":
        return min(1.0, k / n + clt_error_from_counts(k, n, confidence))
    raise RejectedInputError(f"unknown bound {kind!r}; use clopper_pearson, hoeffding or clt")
