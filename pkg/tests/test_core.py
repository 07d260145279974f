import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppscert import canonical
from ppscert.core import (
    BoundedTerm,
    Certificate,
    ErrorLedger,
    Method,
    OutcomeFn,
    RiskEstimate,
    Scenario,
    Verdict,
    assemble_certificate,
    union_bound_confidence,
)
from ppscert.errors import RejectedInputError


def ledger(emp=0.0, e=0.0, phi=0.0, pi=0.0, conf=(0.95, 1.0, 1.0)):
    est = RiskEstimate(emp, min(1.0, emp + e), 0.95, Method.CMC, 1000, {"k": 0})
    return ErrorLedger(est, BoundedTerm(e, conf[0], "cp"), BoundedTerm(phi, conf[1], "enum"),
                       BoundedTerm(pi, conf[2], "enum"))


class TestAssemble:
    def test_zero_ledger_passes(self):
        cert = assemble_certificate(ledger(), 1e-3)
        assert cert.verdict is Verdict.PASS
        assert cert.total == 0.0

    def test_deployment_threshold_fails(self):
        cert = assemble_certificate(ledger(2e-4, 3e-4, 1e-4, 1e-4), 5e-7)
        assert cert.verdict is Verdict.FAIL
        assert cert.total == pytest.approx(7e-4, rel=1e-15)

    def test_sum_below_threshold_passes(self):
        cert = assemble_certificate(ledger(2e-4, 3e-4, 1e-4, 1e-4), 1e-3)
        assert cert.verdict is Verdict.PASS
        assert cert.total == math.fsum([2e-4, 3e-4, 1e-4, 1e-4])

    def test_equality_is_fail(self):
        cert = assemble_certificate(ledger(0.0, 1e-3), 1e-3)
        assert cert.verdict is Verdict.FAIL

    @pytest.mark.parametrize("theta", [0.0, -1e-3, 1.5, math.nan, math.inf])
    def test_bad_theta(self, theta):
        with pytest.raises(RejectedInputError):
            assemble_certificate(ledger(), theta)

    def test_non_finite_term_rejected(self):
        with pytest.raises(RejectedInputError):
            BoundedTerm(math.inf, 0.9, "x")
        with pytest.raises(RejectedInputError):
            BoundedTerm(math.nan, 0.9, "x")

    def test_negative_term_rejected(self):
        with pytest.raises(RejectedInputError):
            BoundedTerm(-1e-9, 0.9, "x")

    def test_serialized_roundtrip_reproduces_verdict(self):
        cert = assemble_certificate(ledger(1.2345678901234567e-4, 3.3e-4, 1e-5, 2e-5), 5e-4,
                                    provenance={"seed": 7})
        text = cert.dumps()
        again = Certificate.from_document(canonical.loads(text))
        recomputed = assemble_certificate(again.ledger, again.theta, provenance=again.provenance)
        assert recomputed.total == cert.total
        assert recomputed.verdict == cert.verdict
        assert recomputed.dumps() == text


class TestUnionBound:
    def test_single(self):
        assert union_bound_confidence([0.99]) == 0.99

    def test_three(self):
        assert union_bound_confidence([0.99, 0.99, 0.99]) == pytest.approx(0.97, abs=1e-15)

    def test_clamped(self):
        assert union_bound_confidence([0.5, 0.2]) == 0.0

    def test_empty(self):
        with pytest.raises(RejectedInputError):
            union_bound_confidence([])

    @pytest.mark.parametrize("c", [0.0, -0.1, 1.1])
    def test_out_of_range(self, c):
        with pytest.raises(RejectedInputError):
            union_bound_confidence([c])

    def test_exact_terms_contribute_nothing(self):
        assert union_bound_confidence([0.95, 1.0, 1.0]) == 0.95


conf = st.floats(min_value=0.5, max_value=1.0, exclude_min=True)
term = st.floats(min_value=0.0, max_value=0.2, allow_nan=False)


@given(st.lists(conf, min_size=1, max_size=6))
def test_joint_confidence_never_exceeds_components(cs):
    assert union_bound_confidence(cs) <= min(cs) + 1e-15


@given(term, term, term, term, st.floats(min_value=1e-9, max_value=1.0), st.integers(0, 3),
       st.floats(min_value=0.0, max_value=0.1))
def test_increasing_a_term_never_flips_fail_to_pass(emp, e, phi, pi, theta, which, bump):
    base = [emp, e, phi, pi]
    up = list(base)
    up[which] += bump
    up[0] = min(up[0], 1.0)
    c0 = assemble_certificate(ledger(*base), theta)
    c1 = assemble_certificate(ledger(*up), theta)
    assert c1.total >= c0.total
    if c0.verdict is Verdict.FAIL:
        assert c1.verdict is Verdict.FAIL


@given(term, term, term, term, st.floats(min_value=1e-9, max_value=1.0))
def test_verdict_is_strict_comparison_of_fsum(emp, e, phi, pi, theta):
    cert = assemble_certificate(ledger(emp, e, phi, pi), theta)
    total = math.fsum([emp, e, phi, pi])
    assert cert.total == total
    assert (cert.verdict is Verdict.PASS) == (total < theta)
    assert cert.joint_confidence <= min(cert.ledger.confidences())


class TestTypes:
    def test_risk_estimate_invariants(self):
        with pytest.raises(RejectedInputError):
            RiskEstimate(0.2, 0.1, 0.95, Method.CMC, 10)
        with pytest.raises(RejectedInputError):
            RiskEstimate(0.1, 0.2, 1.0, Method.CMC, 10)
        with pytest.raises(RejectedInputError):
            RiskEstimate(0.1, 0.2, 0.95, Method.CMC, 0)
        with pytest.raises(ValueError):
            RiskEstimate(0.1, 0.2, 0.95, "MAGIC", 10)

    def test_risk_estimate_document_roundtrip(self):
        est = RiskEstimate(1e-3, 2e-3, 0.95, Method.IS, 100, {"ess": 12.5, "trace": [1, 2]})
        doc = est.to_document()
        assert "trace" not in doc["diagnostics"]
        back = RiskEstimate.from_document(doc)
        assert back.point == est.point and back.upper_bound == est.upper_bound and back.method is Method.IS

    def test_scenario_validation(self):
        with pytest.raises(RejectedInputError):
            Scenario(())
        with pytest.raises(RejectedInputError):
            Scenario((1.0,), seed=2**64)

    def test_outcome_from_metric_coherent(self):
        f = OutcomeFn.from_metric(lambda x: x[:, 0] - 1.0)
        s = Scenario((1.5,), 3)
        assert f(s) == 1 and f.metric_value(s) == 0.5
        assert f(Scenario((1.0,))) == 0

    def test_constant_outcomes(self):
        x = np.zeros((5, 2))
        assert not OutcomeFn.constant(0).batch(x).any()
        assert OutcomeFn.constant(1).batch(x).all()

    def test_ledger_document_roundtrip(self):
        led = ledger(1e-4, 2e-4, 3e-5, 4e-6)
        assert ErrorLedger.from_document(canonical.loads(led.dumps())).dumps() == led.dumps()


class TestCanonical:
    def test_seventeen_digits_roundtrip(self):
        for x in (0.1, 1e-300, 2.0 / 3.0, 1.0000000000000002, 5e-324, 0.0):
            s = canonical.format_float(x)
            assert float(s) == x

    def test_sorted_keys_and_trailing_newline(self):
        s = canonical.dumps({"b": 1, "a": [1.5, None, True]})
        assert s.endswith("\n")
        assert s.index('"a"') < s.index('"b"')

    def test_non_finite_encoded_as_strings(self):
        assert canonical.loads(canonical.dumps({"x": math.inf}))["x"] == "Infinity"

    @given(st.dictionaries(st.text(max_size=5), st.floats(allow_nan=False, allow_infinity=False), max_size=6))
    def test_float_maps_roundtrip_exactly(self, d):
        assert canonical.loads(canonical.dumps(d)) == d

    def test_digest_is_order_independent(self):
        assert canonical.digest({"a": 1, "b": 2}) == canonical.digest({"b": 2, "a": 1})
