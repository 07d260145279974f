"""Bounds on the behavioral (system) and environment-model gap terms.

A gap is ``|E_a[f; x outside the region] - E_b[f; x outside the region]|``
between two scenario laws. The environment gap compares the true law with
the one whose environment is replaced by the surrogate; the system gap then
replaces the system with its surrogate under that same surrogate environment.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from ppscert import kernels, streams
from ppscert.core import BoundedTerm, OutcomeFn, ScenarioDistribution, _plain
from ppscert.errors import (
    InsufficientDataError,
    NonCertifiableError,
    RejectedInputError,
    UnreliableBinningError,
    UnsupportedOracleError,
)
from ppscert.estimators.base import EstimatorConfig
from ppscert.estimators.binomial import clopper_pearson_upper, z_quantile
from ppscert.estimators.sampling import _weights
from ppscert.region import SafeRegion
from ppscert.testbeds import GridWorldBed, split_knob

WEIGHT_RANGE = (0.1, 10.0)
MAX_EMPTY_BIN_SHARE = 0.2
MIN_HIST_SAMPLES = 10_000


class GapMethod(str, enum.Enum):
    EXACT_ENUM = "EXACT_ENUM"
    RATIO_IS = "RATIO_IS"
    HISTOGRAM_RATIO = "HISTOGRAM_RATIO"


CERTIFIED_METHODS = (GapMethod.EXACT_ENUM, GapMethod.RATIO_IS)


@dataclass(frozen=True)
class GapReport:
    term: str
    bound: float
    confidence: float
    method: GapMethod
    value: float = 0.0
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "method", GapMethod(self.method))
        if self.term not in ("phi", "pi", ""):
            raise RejectedInputError("gap term must be 'phi' or 'pi'")
        if not (math.isfinite(self.bound) and self.bound >= 0):
            raise RejectedInputError(f"gap bound must be finite and nonnegative, got {self.bound}")
        if not 0.0 < self.confidence <= 1.0:
            raise RejectedInputError("gap confidence must lie in (0, 1]")

    @property
    def certified(self) -> bool:
        return self.method in CERTIFIED_METHODS

    def with_term(self, term: str) -> "GapReport":
        return GapReport(term, self.bound, self.confidence, self.method, self.value, self.diagnostics)

    def to_term(self) -> BoundedTerm:
        """Ledger entry; refuses methods that cannot back a certificate."""
        if not self.certified:
            raise NonCertifiableError(f"{self.method.value} gap estimates carry no guarantee and cannot enter a certificate")
        return BoundedTerm(self.bound, self.confidence, self.method.value)

    def to_document(self) -> dict:
        return {
            "term": self.term,
            "bound": float(self.bound),
            "confidence": float(self.confidence),
            "method": self.method.value,
            "value": float(self.value),
            "diagnostics": _plain(dict(self.diagnostics)),
        }


def zero_gap(term: str) -> GapReport:
    """Identical laws: the gap is exactly zero."""
    return GapReport(term, 0.0, 1.0, GapMethod.EXACT_ENUM, 0.0, {"identical": True})


# -- exact enumeration --------------------------------------------------------------


def _grid_setup(bed: GridWorldBed, dist_a, dist_b, region):
    for d in (dist_a, dist_b):
        if d.bed_id != bed.bed_id or "slip" not in d.params:
            raise UnsupportedOracleError("exact enumeration needs grid-world laws")
    T_a = bed.transition_matrix(dist_a.params["slip"], dist_a.params["fault"])
    T_b = bed.transition_matrix(dist_b.params["slip"], dist_b.params["fault"])
    w_a = np.asarray(dist_a.params["start_weights"], dtype=float)
    w_b = np.asarray(dist_b.params["start_weights"], dtype=float)
    cells = np.arange(bed.n_cells)
    outside = ~region.contains_cells(cells) if region is not None else np.ones(bed.n_cells, dtype=bool)
    starts = cells[outside & ((w_a > 0) | (w_b > 0))]
    return T_a, T_b, w_a, w_b, starts


def enumerate_paths(bed: GridWorldBed, starts, w_a, w_b, T_a, T_b):
    """Every full path over the union support with its probability under both laws."""
    indptr, indices, pa_t, pb_t = bed.union_support(T_a, T_b)
    paths = np.asarray(starts, dtype=np.int64)[:, None]
    pa = w_a[paths[:, 0]].astype(float)
    pb = w_b[paths[:, 0]].astype(float)
    for _ in range(bed.horizon):
        last = paths[:, -1]
        counts = indptr[last + 1] - indptr[last]
        rep = np.repeat(np.arange(paths.shape[0]), counts)
        offs = np.arange(rep.size) - np.repeat(np.cumsum(counts) - counts, counts)
        j = indptr[last][rep] + offs
        paths = np.column_stack([paths[rep], indices[j]])
        pa = pa[rep] * pa_t[j]
        pb = pb[rep] * pb_t[j]
    return paths, pa, pb


def gap_exact_enum(
    bed,
    dist_a: ScenarioDistribution,
    dist_b: ScenarioDistribution,
    f: Optional[OutcomeFn] = None,
    region: Optional[SafeRegion] = None,
    term: str = "",
) -> GapReport:
    """``|sum over x outside the region of f(x) (p_a(x) - p_b(x))|``, exactly.

    ``f=None`` means the bed's own hazard outcome and uses the pruned
    depth-first kernel; any other outcome is evaluated on every full path.
    """
    if not isinstance(bed, GridWorldBed):
        raise UnsupportedOracleError(f"{type(bed).__name__} has no finite scenario space to enumerate")
    T_a, T_b, w_a, w_b, starts = _grid_setup(bed, dist_a, dist_b, region)
    if f is None:
        indptr, indices, pa, pb = bed.union_support(T_a, T_b)
        fa, fb, diff, n_paths, n_fail = kernels.grid_enumerate(
            starts, w_a, w_b, indptr, indices, pa, pb, bed.hazard_mask, bed.horizon
        )
        route = "pruned path enumeration (stops at first hazard)"
        tv = None  # prefixes merge failing paths, so only the signed sum is available
    else:
        paths, pa, pb = enumerate_paths(bed, starts, w_a, w_b, T_a, T_b)
        fv = f.batch(paths.astype(float))
        fa = math.fsum(pa[fv])
        fb = math.fsum(pb[fv])
        diff = math.fsum((pa - pb)[fv])
        n_paths, n_fail = int(paths.shape[0]), int(fv.sum())
        route = "full path enumeration"
        tv = math.fsum(np.abs(pa - pb)[fv])
    return GapReport(
        term,
        abs(diff),
        1.0,
        GapMethod.EXACT_ENUM,
        diff,
        {"risk_a": fa, "risk_b": fb, "paths": n_paths, "failing_paths": n_fail, "route": route,
         "starts": int(len(starts)), "tv_on_failure_set": tv},
    )


# -- density-ratio importance sampling ----------------------------------------------


def gap_ratio_is(
    dist_true: ScenarioDistribution,
    dist_surrogate: ScenarioDistribution,
    f: OutcomeFn,
    region: Optional[SafeRegion],
    cfg: EstimatorConfig,
    *,
    term: str = "",
    workers: int = 1,
    stream: int = streams.STREAM_MAIN,
) -> GapReport:
    """Bound on ``|E_s[f (w - 1)]|`` with ``w = p_true / p_surrogate``, sampling the surrogate.

    Bound: ``|mean| + z * sd / sqrt(n)`` at ``cfg.confidence``. With no
    failures in the sample the spread is zero and the bound falls back to
    the Clopper-Pearson zero-failure bound scaled by the largest weight
    (heuristic, flagged).
    """
    if dist_true.log_density is None or dist_surrogate.log_density is None:
        raise RejectedInputError("the density ratio needs both densities")
    if dist_true.dim != dist_surrogate.dim:
        raise RejectedInputError("true and surrogate dimensions differ")

    def run(i, size, rng):
        x = dist_surrogate.sample(rng, size)
        fail = f.batch(x)
        if region is not None:
            fail &= ~region.contains(x)
        w = _weights(dist_true, dist_surrogate, x, fail)
        t = np.where(fail, w - 1.0, 0.0)
        wf = w[fail]
        off = int(np.count_nonzero((wf < WEIGHT_RANGE[0]) | (wf > WEIGHT_RANGE[1])))
        return (math.fsum(t), math.fsum(t * t), math.fsum(np.abs(t)), int(fail.sum()),
                float(wf.min(initial=np.inf)), float(wf.max(initial=0.0)), float(w.max(initial=0.0)), off)

    parts = streams.map_chunks(run, cfg.seed, cfg.n, stream, workers)
    n = int(cfg.n)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    k = sum(p[3] for p in parts)
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * (n / (n - 1) if n > 1 else 1.0)
    w_lo = min(p[4] for p in parts)
    w_hi = max(p[5] for p in parts)
    w_max = max(p[6] for p in parts)
    off = sum(p[7] for p in parts)
    diag = {
        "k": k,
        "tv_on_failure_set": math.fsum(p[2] for p in parts) / n,
        "failure_weight_min": w_lo if k else None,
        "failure_weight_max": w_hi if k else None,
        "weights_outside_range": off,
        "unreliable_weights": off > 0,
        "term_sd": math.sqrt(var),
    }
    if k == 0:
        bound = clopper_pearson_upper(0, n, cfg.confidence) * max(1.0, w_max)
        diag["bound_kind"] = "zero-failure fallback (heuristic)"
    else:
        bound = abs(mean) + z_quantile(cfg.confidence) * math.sqrt(var / n)
        diag["bound_kind"] = "clt"
    return GapReport(term, min(bound, 1.0), cfg.confidence, GapMethod.RATIO_IS, mean, diag)


# -- histogram density ratio (diagnostic only) --------------------------------------


def gap_histogram_ratio(
    samples_true,
    samples_surrogate,
    f_values,
    region: Optional[SafeRegion] = None,
    cfg: Optional[EstimatorConfig] = None,
    *,
    bins: int = 64,
    term: str = "",
    min_samples: int = MIN_HIST_SAMPLES,
) -> GapReport:
    """Binned density-ratio estimate of the gap from two sample sets.

    ``f_values`` is ``(f_true, f_surrogate)``, the outcomes of each sample.
    Per bin the ratio ``w_b = p_true,b / p_surrogate,b`` reweights the
    surrogate bin mass; the estimate is
    ``sum_b p_s,b (w_b * mean_t,b(f) - mean_s,b(f))`` over bins holding
    surrogate samples. Binning bias is uncontrolled, so this never backs a
    certificate.
    """
    cfg = cfg or EstimatorConfig()
    xt = np.atleast_2d(np.asarray(samples_true, dtype=float))
    xs = np.atleast_2d(np.asarray(samples_surrogate, dtype=float))
    if xt.shape[0] == 1 and xt.shape[1] > 1:
        xt = xt.T
    if xs.shape[0] == 1 and xs.shape[1] > 1:
        xs = xs.T
    ft, fs = (np.asarray(v, dtype=float).ravel() for v in f_values)
    if xt.shape[1] != xs.shape[1]:
        raise RejectedInputError("sample sets have different dimensions")
    if xt.shape[1] > 3:
        raise RejectedInputError("histogram ratio supports at most 3 binned dimensions")
    if xt.shape[0] < min_samples or xs.shape[0] < min_samples:
        raise InsufficientDataError(f"need at least {min_samples} samples per set")
    if ft.size != xt.shape[0] or fs.size != xs.shape[0]:
        raise RejectedInputError("f_values must match the sample counts")
    if region is not None:
        ft = np.where(region.contains(xt), 0.0, ft)
        fs = np.where(region.contains(xs), 0.0, fs)
    if bins < 1:
        raise RejectedInputError("need at least one bin")

    d = xt.shape[1]
    both = np.vstack([xt, xs])
    edges = [np.linspace(both[:, j].min(), both[:, j].max(), bins + 1) for j in range(d)]

    def index(x):
        idx = np.zeros(x.shape[0], dtype=np.int64)
        for j in range(d):
            ij = np.clip(np.searchsorted(edges[j], x[:, j], side="right") - 1, 0, bins - 1)
            idx = idx * bins + ij
        return idx

    nb = bins**d
    bt, bs = index(xt), index(xs)
    cnt_t = np.bincount(bt, minlength=nb).astype(float)
    cnt_s = np.bincount(bs, minlength=nb).astype(float)
    sum_ft = np.bincount(bt, weights=ft, minlength=nb)
    sum_fs = np.bincount(bs, weights=fs, minlength=nb)
    p_t = cnt_t / xt.shape[0]
    p_s = cnt_s / xs.shape[0]
    filled = cnt_s > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(filled, p_t / p_s, np.nan)
        mean_t = np.where(cnt_t > 0, sum_ft / cnt_t, 0.0)
        mean_s = np.where(filled, sum_fs / cnt_s, 0.0)
    fail_mass = math.fsum(sum_ft / xt.shape[0])
    lost = math.fsum((sum_ft / xt.shape[0])[~filled])
    share = lost / fail_mass if fail_mass > 0 else 0.0
    if share > MAX_EMPTY_BIN_SHARE:
        raise UnreliableBinningError(
            f"bins without surrogate samples carry {share:.1%} of the true failure mass (> {MAX_EMPTY_BIN_SHARE:.0%})"
        )
    contrib = np.where(filled, p_s * (np.nan_to_num(w) * mean_t - mean_s), 0.0)
    est = math.fsum(contrib)
    wf = w[filled & (sum_ft > 0)]
    return GapReport(
        term,
        abs(est),
        cfg.confidence,
        GapMethod.HISTOGRAM_RATIO,
        est,
        {
            "bins_per_dim": bins,
            "bins_filled": int(filled.sum()),
            "empty_bin_failure_share": share,
            "failure_weight_min": float(wf.min()) if wf.size else None,
            "failure_weight_max": float(wf.max()) if wf.size else None,
            "disclaimer": "binned ratio estimate with uncontrolled bias; not a certified bound",
        },
    )


# -- factorization ------------------------------------------------------------------


def factor_laws(bed, surrogate_knob: Optional[Mapping]) -> tuple[ScenarioDistribution, ScenarioDistribution, ScenarioDistribution]:
    """``(true, environment replaced, environment and system replaced)``.

    The middle law keeps the true system and swaps in the surrogate
    environment; the gap terms must be taken in this order.
    """
    pi, phi = split_knob(bed, surrogate_knob)
    true = bed.distribution()
    mid = bed.surrogate(pi) if pi else true
    sur = bed.surrogate({**pi, **phi}) if (pi or phi) else true
    return true, mid, sur


def gap_terms(
    bed,
    surrogate_knob: Optional[Mapping],
    method: GapMethod | str,
    region: Optional[SafeRegion] = None,
    cfg: Optional[EstimatorConfig] = None,
    f: Optional[OutcomeFn] = None,
    *,
    workers: int = 1,
) -> tuple[GapReport, GapReport]:
    """``(err_pi, err_phi)`` for a surrogate configuration of ``bed``."""
    method = GapMethod(str(method).upper() if not isinstance(method, GapMethod) else method)
    cfg = cfg or EstimatorConfig()
    true, mid, sur = factor_laws(bed, surrogate_knob)
    out = []
    for term, a, b in (("pi", true, mid), ("phi", mid, sur)):
        if a is b:
            out.append(zero_gap(term))
        elif method is GapMethod.EXACT_ENUM:
            out.append(gap_exact_enum(bed, a, b, f, region, term=term))
        elif method is GapMethod.RATIO_IS:
            out.append(gap_ratio_is(a, b, f or bed.outcome(), region, cfg, term=term, workers=workers))
        else:
            out.append(_histogram_from_laws(a, b, f or bed.outcome(), region, cfg, term, workers))
    return out[0], out[1]


def _histogram_from_laws(a, b, f, region, cfg, term, workers):
    def draw(dist, stream):
        def run(i, size, rng):
            return dist.sample(rng, size)
        return np.concatenate(streams.map_chunks(run, cfg.seed, cfg.n, stream, workers))

    xa = draw(a, streams.STREAM_MAIN)
    xb = draw(b, streams.STREAM_PROPOSAL)
    return gap_histogram_ratio(xa, xb, (f.batch(xa), f.batch(xb)), region, cfg, term=term)
