from __future__ import annotations

import math

import pytest

from cqsw.core.errors import ValidationFailure
from cqsw.services.bb84 import bb84_measurement_compression, bb84_oneshot


def test_oneshot_sends_only_the_basis_bit() -> None:
    report = bb84_oneshot()
    assert all(report.assertions.values())
    assert report.code.M == 2
    assert report.code.reserved is None
    assert report.rate == pytest.approx(1.0)
    assert report.rate_with_reserved == pytest.approx(math.log2(3))
    assert report.metrics.P_e == pytest.approx(0.0, abs=1e-10)
    assert report.metrics.Delta == pytest.approx(0.0, abs=1e-10)
    assert report.benchmark_rate == pytest.approx(1.0)
    assert report.ledger.chain_values == pytest.approx((2.0, 2.0, 2.0, 1.0), abs=1e-9)
    assert report.ledger.chain_monotone


def test_oneshot_codes_group_by_basis() -> None:
    report = bb84_oneshot()
    assert [c.codewords for c in report.code.codes] == [((0,), (1,)), ((2,), (3,))]
    for c in report.code.codes:
        assert c.max_error == pytest.approx(0.0, abs=1e-10)


def test_oneshot_holds_for_narrow_window() -> None:
    # every eigenvalue of I/2 sits at the entropy, so the typical projector stays full
    assert bb84_oneshot(delta=0.1).metrics.P_e == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValidationFailure):
        bb84_oneshot(epsilon=1.0)


def test_measurement_compression_matches_direct_measurement() -> None:
    report = bb84_measurement_compression()
    assert all(report.assertions.values())
    assert [o.label for o in report.outcomes] == ["0", "1", "+", "-"]
    for o in report.outcomes:
        assert o.prob_direct == pytest.approx(0.25)
        assert o.prob_simulated == pytest.approx(0.25)
        assert o.state_gap == pytest.approx(0.0, abs=1e-10)
    assert report.direct_bits == pytest.approx(2.0)
    assert report.communication_bits + report.shared_random_bits == pytest.approx(report.direct_bits)
    assert report.mutual_information == pytest.approx(1.0)
    assert report.conditional_entropy == pytest.approx(1.0)
