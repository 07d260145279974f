import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import GRID5_RISK_SLIP10, GRID5_RISK_SLIP12, grid_path_masses, grid_risk
from ppscert.core import BoundedTerm, OutcomeFn
from ppscert.errors import (
    InsufficientDataError,
    NonCertifiableError,
    RejectedInputError,
    UnreliableBinningError,
    UnsupportedOracleError,
)
from ppscert.estimators import EstimatorConfig
from ppscert.gaps import (
    GapMethod,
    GapReport,
    factor_laws,
    gap_exact_enum,
    gap_histogram_ratio,
    gap_ratio_is,
    gap_terms,
    zero_gap,
)
from ppscert.region import halfspace_for_alpha, verify_region
from ppscert.testbeds import GaussianThresholdBed, GridWorldBed


class TestExactEnumeration:
    def test_equals_chain_difference(self):
        bed = GridWorldBed()
        rep = gap_exact_enum(bed, bed.distribution(), bed.distribution(slip=0.12))
        assert abs(rep.value - (GRID5_RISK_SLIP10 - GRID5_RISK_SLIP12)) < 1e-12
        assert rep.bound == abs(rep.value) and rep.confidence == 1.0

    def test_full_and_pruned_routes_agree(self):
        bed = GridWorldBed(size=4, hazard_cells=frozenset({(1, 2)}), horizon=4)
        a, b = bed.distribution(), bed.distribution(slip=0.2, fault=0.05)
        pruned = gap_exact_enum(bed, a, b)
        full = gap_exact_enum(bed, a, b, f=bed.outcome())
        assert abs(pruned.value - full.value) < 1e-14
        assert full.diagnostics["tv_on_failure_set"] >= abs(full.value)

    def test_full_enumeration_matches_path_oracle(self):
        bed = GridWorldBed(size=3, hazard_cells=frozenset({(1, 1)}), horizon=3)
        a, b = bed.distribution(), bed.distribution(slip=0.25)
        far_corner = OutcomeFn(lambda x: x[:, -1] == 8)  # ends in the bottom-right cell
        rep = gap_exact_enum(bed, a, b, f=far_corner)
        moves = list(bed.moves)
        ma = grid_path_masses(3, 0.1, 0.0, 3, moves, bed.start_weights)
        mb = grid_path_masses(3, 0.25, 0.0, 3, moves, bed.start_weights)
        ref = math.fsum(p for path, p in ma.items() if path[-1] == 8) - math.fsum(
            p for path, p in mb.items() if path[-1] == 8)
        assert abs(rep.value - ref) < 1e-14

    def test_identical_laws_and_null_outcome(self):
        bed = GridWorldBed()
        d = bed.distribution()
        assert gap_exact_enum(bed, d, d).bound == 0.0
        assert gap_exact_enum(bed, d, bed.distribution(slip=0.3), f=OutcomeFn.constant(0)).bound == 0.0

    def test_region_excludes_safe_starts(self):
        bed = GridWorldBed(size=7, hazard_cells=frozenset({(3, 3)}), horizon=3)
        region = verify_region(bed)
        a, b = bed.distribution(), bed.distribution(slip=0.2)
        # a verified region carries no failures, so restricting to its complement changes nothing
        assert gap_exact_enum(bed, a, b, region=region).value == pytest.approx(gap_exact_enum(bed, a, b).value,
                                                                               abs=1e-15)
        assert gap_exact_enum(bed, a, b, region=region).diagnostics["starts"] == 24

    def test_continuous_bed_refused(self):
        bed = GaussianThresholdBed()
        with pytest.raises(UnsupportedOracleError):
            gap_exact_enum(bed, bed.distribution(), bed.surrogate({"shift": 0.1}))


@given(st.floats(0.0, 0.3), st.floats(0.0, 0.3), st.floats(0.0, 0.1))
def test_exact_gap_is_antisymmetric_and_matches_oracle(s1, s2, fault):
    bed = GridWorldBed(size=4, hazard_cells=frozenset({(2, 1)}), horizon=3)
    a, b = bed.distribution(slip=s1, fault=fault), bed.distribution(slip=s2)
    ab, ba = gap_exact_enum(bed, a, b), gap_exact_enum(bed, b, a)
    assert ab.value == pytest.approx(-ba.value, abs=1e-15)
    moves = list(bed.moves)
    ref = grid_risk(4, {9}, s1, fault, 3, moves, bed.start_weights) - grid_risk(4, {9}, s2, 0.0, 3, moves,
                                                                                  bed.start_weights)
    assert abs(ab.value - ref) < 1e-12


class TestFactorization:
    def test_law_order(self):
        bed = GridWorldBed()
        true, mid, sur = factor_laws(bed, {"slip": 0.12, "fault": 0.02})
        assert (mid.params["slip"], mid.params["fault"]) == (0.12, 0.0)
        assert (sur.params["slip"], sur.params["fault"]) == (0.12, 0.02)
        assert true.params["slip"] == 0.1

    def test_terms_telescope_to_total_difference(self):
        bed = GridWorldBed()
        knob = {"slip": 0.15, "fault": 0.03}
        pi, phi = gap_terms(bed, knob, "EXACT_ENUM")
        true, _, sur = factor_laws(bed, knob)
        total = gap_exact_enum(bed, true, sur)
        assert pi.value + phi.value == pytest.approx(total.value, abs=1e-15)
        assert pi.bound + phi.bound >= total.bound - 1e-15
        assert (pi.term, phi.term) == ("pi", "phi")

    def test_untouched_factor_is_exactly_zero(self):
        pi, phi = gap_terms(GridWorldBed(), {"slip": 0.12}, GapMethod.EXACT_ENUM)
        assert phi.bound == 0.0 and phi.confidence == 1.0
        assert pi.bound > 0

    def test_no_knob(self):
        pi, phi = gap_terms(GridWorldBed(), None, "EXACT_ENUM")
        assert pi.bound == phi.bound == 0.0


class TestRatioIS:
    def test_gaussian_shift_gap(self):
        bed = GaussianThresholdBed(tau=2.0)
        exact = stats.norm.sf(2.0) - stats.norm.sf(1.9)
        rep = gap_ratio_is(bed.distribution(), bed.surrogate({"shift": 0.1}), bed.outcome(), None,
                           EstimatorConfig(n=200_000, seed=3))
        sd = rep.diagnostics["term_sd"] / math.sqrt(2e5)
        assert abs(rep.value - exact) < 4 * sd
        assert rep.bound >= abs(rep.value)
        assert not rep.diagnostics["unreliable_weights"]

    def test_agrees_with_exact_enumeration_on_grid(self):
        bed = GridWorldBed()
        a, b = bed.distribution(), bed.distribution(slip=0.12)
        exact = gap_exact_enum(bed, a, b).value
        rep = gap_ratio_is(a, b, bed.outcome(), None, EstimatorConfig(n=300_000, seed=4))
        assert abs(rep.value - exact) < 4 * rep.diagnostics["term_sd"] / math.sqrt(3e5)

    def test_identical_laws_give_zero_terms(self):
        bed = GaussianThresholdBed(tau=2.0)
        d = bed.distribution()
        rep = gap_ratio_is(d, d, bed.outcome(), None, EstimatorConfig(n=10_000, seed=1))
        assert rep.value == 0.0 and rep.diagnostics["term_sd"] == 0.0

    def test_region_masks_failures(self):
        bed = GaussianThresholdBed(tau=2.0)
        region = halfspace_for_alpha(bed, 5.0)
        d, s = bed.distribution(), bed.surrogate({"shift": 0.1})
        a = gap_ratio_is(d, s, bed.outcome(), region, EstimatorConfig(n=50_000, seed=2))
        b = gap_ratio_is(d, s, bed.outcome(), None, EstimatorConfig(n=50_000, seed=2))
        # every failure lies outside the half-space, so the mask is a no-op here
        assert a.value == b.value


class TestHistogram:
    def draws(self, n=100_000, shift=0.1, seed=0):
        bed = GaussianThresholdBed(tau=2.0)
        rng = np.random.default_rng(seed)
        xt = rng.standard_normal((n, 1))
        xs = rng.standard_normal((n, 1)) + shift
        return bed, xt, xs

    def test_within_factor_two(self):
        bed, xt, xs = self.draws()
        f = bed.outcome()
        rep = gap_histogram_ratio(xt, xs, (f.batch(xt), f.batch(xs)))
        exact = abs(stats.norm.sf(2.0) - stats.norm.sf(1.9))
        assert exact / 2 <= rep.bound <= 2 * exact

    def test_one_bin_is_difference_of_sample_means(self):
        bed, xt, xs = self.draws(n=20_000)
        f = bed.outcome()
        ft, fs = f.batch(xt), f.batch(xs)
        rep = gap_histogram_ratio(xt, xs, (ft, fs), bins=1)
        assert rep.value == pytest.approx(ft.mean() - fs.mean(), abs=1e-15)

    def test_never_enters_a_certificate(self):
        bed, xt, xs = self.draws(n=20_000)
        f = bed.outcome()
        rep = gap_histogram_ratio(xt, xs, (f.batch(xt), f.batch(xs)))
        assert not rep.certified
        with pytest.raises(NonCertifiableError):
            rep.to_term()

    def test_unreliable_binning(self):
        bed, xt, _ = self.draws(n=20_000)
        xs = np.random.default_rng(5).uniform(-3.0, 0.0, (20_000, 1))
        f = bed.outcome()
        with pytest.raises(UnreliableBinningError):
            gap_histogram_ratio(xt, xs, (f.batch(xt), f.batch(xs)))

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            gap_histogram_ratio(np.zeros((10, 1)), np.zeros((10, 1)), (np.zeros(10), np.zeros(10)))

    def test_too_many_dimensions(self):
        x = np.zeros((20_000, 4))
        with pytest.raises(RejectedInputError):
            gap_histogram_ratio(x, x, (np.zeros(20_000), np.zeros(20_000)))

    def test_via_gap_terms(self):
        pi, _ = gap_terms(GaussianThresholdBed(tau=2.0), {"shift": 0.1}, "HISTOGRAM_RATIO",
                          cfg=EstimatorConfig(n=100_000, seed=7))
        assert pi.method is GapMethod.HISTOGRAM_RATIO and "disclaimer" in pi.diagnostics


class TestReport:
    def test_certified_methods_make_terms(self):
        t = GapReport("pi", 0.01, 0.99, "RATIO_IS").to_term()
        assert isinstance(t, BoundedTerm) and t.value == 0.01 and t.confidence == 0.99
        assert zero_gap("phi").to_term().value == 0.0

    @pytest.mark.parametrize("kw", [{"bound": -1.0}, {"bound": math.nan}, {"confidence": 0.0}, {"term": "psi"}])
    def test_validation(self, kw):
        args = {"term": "pi", "bound": 0.1, "confidence": 0.9, "method": "RATIO_IS", **kw}
        with pytest.raises(RejectedInputError):
            GapReport(**args)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            gap_terms(GridWorldBed(), {"slip": 0.12}, "KDE")
