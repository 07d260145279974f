import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from oracles import GAUSS_TAIL_3_090232, GRID5_RISK_SLIP10, GRID5_RISK_SLIP12, TAU_1E3, grid_risk
from ppscert import streams
from ppscert.errors import RejectedInputError, UnsupportedOracleError
from ppscert.testbeds import (
    CarFollowingBed,
    GaussianThresholdBed,
    GridWorldBed,
    make_bed,
    split_knob,
    surrogate,
    truth_oracle,
)


def mc_fraction(bed, dist, n, seed):
    f = bed.outcome()
    hits = streams.map_chunks(lambda i, size, rng: int(f.batch(dist.sample(rng, size)).sum()), seed, n)
    return sum(hits) / n


class TestGaussian:
    def test_truth_matches_frozen_tail(self):
        bed = GaussianThresholdBed(tau=TAU_1E3)
        assert truth_oracle(bed, bed.distribution()) == pytest.approx(GAUSS_TAIL_3_090232, rel=1e-12)

    def test_truth_prints_as_one_in_a_thousand(self):
        bed = GaussianThresholdBed(tau=TAU_1E3)
        assert f"{truth_oracle(bed, bed.distribution()):.3e}" == "1.000e-03"

    def test_zero_shift_surrogate_has_identical_density(self):
        bed = GaussianThresholdBed(dim=3)
        x = np.random.default_rng(0).standard_normal((50, 3))
        assert np.array_equal(bed.surrogate({"shift": 0.0}).log_density(x), bed.distribution().log_density(x))

    def test_density_is_product_of_standard_normals(self):
        bed = GaussianThresholdBed(dim=2)
        x = np.random.default_rng(1).standard_normal((20, 2))
        ref = stats.norm.logpdf(x).sum(axis=1)
        assert np.allclose(bed.distribution().log_density(x), ref, rtol=0, atol=1e-12)

    def test_density_integrates_to_one(self):
        bed = GaussianThresholdBed()
        d = bed.surrogate({"shift": 0.7})
        val, _ = integrate.quad(lambda t: float(d.density(np.array([[t]]))[0]), -np.inf, np.inf)
        assert abs(val - 1.0) < 1e-6

    def test_shift_out_of_range(self):
        with pytest.raises(RejectedInputError):
            GaussianThresholdBed().surrogate({"shift": 1.5})
        with pytest.raises(RejectedInputError):
            GaussianThresholdBed().surrogate({"slip": 0.1})

    def test_mc_consistency(self):
        bed = GaussianThresholdBed(tau=2.0)
        p = truth_oracle(bed, bed.distribution())
        n = 1_000_000
        assert abs(mc_fraction(bed, bed.distribution(), n, 3) - p) < 4 * math.sqrt(p * (1 - p) / n)


class TestGrid:
    def test_truth_matches_path_enumeration(self):
        bed = GridWorldBed()
        for slip, ref in ((0.10, GRID5_RISK_SLIP10), (0.12, GRID5_RISK_SLIP12)):
            assert abs(truth_oracle(bed, bed.distribution(slip=slip)) - ref) < 1e-12

    def test_truth_matches_enumeration_with_fault_noise(self):
        bed = GridWorldBed(size=4, hazard_cells=frozenset({(1, 2)}), slip_prob=0.07, fault_prob=0.05, horizon=5)
        ref = grid_risk(4, {6}, 0.07, 0.05, 5, list(bed.moves), bed.start_weights)
        assert abs(bed.truth(bed.distribution()) - ref) < 1e-12

    def test_surrogate_slip_changes_risk_by_chain_recomputation(self):
        bed = GridWorldBed()
        delta = truth_oracle(bed, surrogate(bed, {"slip": 0.12})) - truth_oracle(bed, bed.distribution())
        assert delta == pytest.approx(GRID5_RISK_SLIP12 - GRID5_RISK_SLIP10, abs=1e-12)

    def test_no_hazards_gives_zero(self):
        bed = make_bed("gridworld", {"hazard_cells": []})
        assert truth_oracle(bed, bed.distribution()) == 0.0

    def test_path_law_sums_to_one(self):
        bed = GridWorldBed(size=3, hazard_cells=frozenset({(1, 1)}), horizon=3, slip_prob=0.2, fault_prob=0.1)
        d = bed.distribution()
        T = bed.transition_matrix(0.2, 0.1)
        assert np.allclose(T.sum(axis=1), 1.0, atol=1e-15)
        # sum of path masses over every cell sequence
        paths = np.array(list(itertools.product(range(9), repeat=4)), dtype=float)
        assert abs(d.density(paths).sum() - 1.0) < 1e-12

    def test_knob_range(self):
        bed = GridWorldBed()
        with pytest.raises(RejectedInputError):
            bed.surrogate({"slip": 0.35})
        with pytest.raises(RejectedInputError):
            bed.surrogate({"wind": 0.1})

    def test_mc_consistency(self):
        bed = GridWorldBed()
        p = GRID5_RISK_SLIP10
        n = 1_000_000
        assert abs(mc_fraction(bed, bed.distribution(), n, 4) - p) < 4 * math.sqrt(p * (1 - p) / n)

    def test_policy_letters(self):
        bed = GridWorldBed(size=2, hazard_cells=frozenset(), policy="E W . N")
        assert list(bed.moves) == [2, 3, 4, 0]
        with pytest.raises(RejectedInputError):
            GridWorldBed(size=2, policy="EW")

    def test_split_knob(self):
        pi, phi = split_knob(GridWorldBed(), {"slip": 0.12, "fault": 0.01})
        assert pi == {"slip": 0.12} and phi == {"fault": 0.01}


class TestCarFollowing:
    def test_mc_consistency_with_quadrature(self):
        bed = CarFollowingBed()
        p = truth_oracle(bed, bed.distribution())
        assert 1e-4 < p < 0.5
        n = 1_000_000
        q = mc_fraction(bed, bed.distribution(), n, 5)
        # quadrature carries a documented relative error of at most 1%
        assert abs(q - p) < 4 * math.sqrt(p * (1 - p) / n) + 0.01 * p

    def test_quadrature_converges(self):
        bed = CarFollowingBed()
        _, info = bed.quadrature(bed.distribution())
        assert info["converged"]
        (_, a), (_, b) = info["history"][-2:]
        assert abs(a - b) <= 0.005 * b

    def test_scaled_density_matches_histogram(self):
        bed = CarFollowingBed()
        d = bed.surrogate({"decel_scale": 1.1})
        x = d.sample(np.random.default_rng(6), 1_000_000)
        counts, edges = np.histogram(x[:, 1], bins=40, range=(0.0, 8.8))
        mid = 0.5 * (edges[:-1] + edges[1:])
        pts = np.column_stack([np.full_like(mid, 2.5), mid])
        # the onset is uniform on [0, 5]: divide it out to get the magnitude marginal
        expected = d.density(pts) * 5.0 * np.diff(edges) * x.shape[0]
        keep = expected > 200
        z = (counts[keep] - expected[keep]) / np.sqrt(expected[keep])
        assert np.max(np.abs(z)) < 5.0

    def test_density_integrates_to_one(self):
        bed = CarFollowingBed()
        d = bed.surrogate({"decel_scale": 0.8})
        val, _ = integrate.dblquad(lambda m, on: float(d.density(np.array([[on, m]]))[0]), 0.0, 5.0, 0.0, 6.4)
        assert abs(val - 1.0) < 1e-6

    def test_metric_is_minus_min_gap(self):
        bed = CarFollowingBed()
        x = bed.distribution().sample(np.random.default_rng(7), 1000)
        gap, _ = bed.rollout(x)
        y = bed.gap_metric(x)
        assert np.array_equal(y > 0, gap <= 0)

    def test_scale_out_of_range(self):
        with pytest.raises(RejectedInputError):
            CarFollowingBed().surrogate({"decel_scale": 2.0})

    def test_unbounded_onset_rejected(self):
        with pytest.raises(RejectedInputError):
            CarFollowingBed(onset_range=(0.0, math.inf))


@pytest.mark.parametrize("bed", [GaussianThresholdBed(), GridWorldBed(), CarFollowingBed()], ids=lambda b: b.bed_id)
def test_metric_coherent_with_binary(bed):
    x = bed.distribution().sample(np.random.default_rng(8), 20_000)
    f = bed.outcome()
    assert np.array_equal(f.batch(x), f.metric(x) > 0)


@given(st.integers(0, 2**32), st.integers(1, 5000))
def test_sampling_is_reproducible(seed, n):
    d = CarFollowingBed().distribution()
    a = d.sample(np.random.default_rng(seed), n)
    b = d.sample(np.random.default_rng(seed), n)
    assert np.array_equal(a, b)


@given(st.lists(st.floats(-6, 6), min_size=1, max_size=40))
def test_gaussian_outcome_is_threshold(xs):
    bed = GaussianThresholdBed()
    x = np.array(xs)[:, None]
    assert np.array_equal(bed.outcome().batch(x), x[:, 0] > bed.tau)


def test_oracle_rejects_foreign_law():
    with pytest.raises(UnsupportedOracleError):
        GridWorldBed().truth(GaussianThresholdBed().distribution())


def test_unknown_bed():
    with pytest.raises(RejectedInputError):
        make_bed("pendulum")
