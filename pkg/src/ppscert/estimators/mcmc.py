"""Component-wise Metropolis moves restricted to a level set ``{metric >= level}``."""
from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np

from ppscert.core import ScenarioDistribution


def conditional_move(
    x: np.ndarray,
    y: np.ndarray,
    dist: ScenarioDistribution,
    metric: Callable[[np.ndarray], np.ndarray],
    level: float,
    sigma: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """One modified-Metropolis step for every chain in ``x``.

    Each coordinate gets a Gaussian random-walk proposal accepted against the
    target density (with the other coordinates held at their current values);
    the resulting candidate replaces the state only if it stays in the level
    set. The same random numbers are drawn whatever gets accepted, so runs are
    reproducible from the generator state alone.

    Returns ``(x_new, y_new, moved, n_evaluated)``.
    """
    m, d = x.shape
    noise = rng.standard_normal((m, d)) * sigma
    log_u = np.log(rng.random((m, d)))
    cand = x.copy()
    lp = dist.log_density(cand)
    for j in range(d):
        prop = cand.copy()
        prop[:, j] += noise[:, j]
        lp_prop = dist.log_density(prop)
        with np.errstate(invalid="ignore"):
            ok = log_u[:, j] < lp_prop - lp
        ok &= np.isfinite(lp_prop)
        cand[ok, j] = prop[ok, j]
        lp = np.where(ok, lp_prop, lp)
    changed = np.any(cand != x, axis=1)
    y_new = y.copy()
    moved = np.zeros(m, dtype=bool)
    if np.any(changed):
        yc = np.asarray(metric(cand[changed]), dtype=float)
        inside = yc >= level
        idx = np.flatnonzero(changed)[inside]
        moved[idx] = True
        y_new[idx] = yc[inside]
    x_new = np.where(moved[:, None], cand, x)
    return x_new, y_new, moved, int(changed.sum())


TARGET_ACCEPTANCE = 0.32


def adapt_scale(scale: float, acceptance: float, target: float = TARGET_ACCEPTANCE, gain: float = 1.0) -> float:
    """Robbins-Monro step on the log scale toward ``target`` acceptance.

    Applied after each synchronized step across all chains of a level. The
    target sits at the low end of the 30-50% band: near a level boundary,
    short steps are accepted often but barely decorrelate the chain.
    """
    return scale * math.exp(gain * (acceptance - target))
