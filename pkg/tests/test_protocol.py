from __future__ import annotations

import math

import numpy as np
import pytest

from cqsw.core.config import Settings
from cqsw.core.errors import ValidationFailure
from cqsw.services.coding import cover_audit, exact_code_metrics, greedy_cover
from cqsw.services.ensembles import (
    bb84_povm,
    induced_ensemble,
    orthogonal_pair_ensemble,
    zero_plus_ensemble,
)
from cqsw.services.linalg import ket_projector, validate_povm
from cqsw.services.protocol import (
    converse_audit,
    fano_bound,
    gentle_bound,
    gentle_measurement_check,
    reference_ensemble,
    run_trials,
)


@pytest.fixture(scope="module")
def orthogonal_code():
    e = orthogonal_pair_ensemble()
    return e, greedy_cover(e, 4, 0.2, 0.3, rng_seed=3)


@pytest.fixture(scope="module")
def zero_plus_code():
    e = zero_plus_ensemble()
    return e, greedy_cover(e, 4, 0.2, 0.5, rng_seed=7)


@pytest.fixture(scope="module")
def zero_plus_six():
    e = zero_plus_ensemble()
    return e, greedy_cover(e, 6, 0.2, 0.5, rng_seed=7)


def test_monte_carlo_matches_exact_on_orthogonal_code(orthogonal_code) -> None:
    e, code = orthogonal_code
    summary = run_trials(code, e, 4000, seed=1)
    sigma = math.sqrt(0.125 * 0.875 / 4000)
    assert abs(summary.P_e_hat - 0.125) <= 5 * sigma
    assert summary.Delta_hat == pytest.approx(0.0, abs=1e-10)
    assert len(summary.records) == 4000
    for record in summary.records:
        if record.encoded_index == code.M:
            assert record.decoded is None
            assert not record.correct
        else:
            assert record.correct
            assert record.decoded == record.xn


def test_monte_carlo_matches_exact_on_zero_plus_code(zero_plus_code) -> None:
    e, code = zero_plus_code
    exact = exact_code_metrics(code, e)
    summary = run_trials(code, e, 5000, seed=2, keep_records=False)
    sigma = math.sqrt(max(exact.P_e * (1.0 - exact.P_e), 1e-6) / 5000)
    assert abs(summary.P_e_hat - exact.P_e) <= 5 * sigma
    assert abs(summary.Delta_hat - exact.Delta) <= 5 * summary.Delta_stderr + 1e-3
    assert summary.records == ()


def test_trials_do_not_depend_on_worker_count(zero_plus_code) -> None:
    e, code = zero_plus_code
    serial = run_trials(code, e, 1200, seed=9, settings=Settings(trial_block=256, workers=1))
    threaded = run_trials(code, e, 1200, seed=9, settings=Settings(trial_block=256, workers=3))
    assert serial.records == threaded.records
    assert serial.P_e_hat == threaded.P_e_hat
    assert serial.Delta_hat == threaded.Delta_hat


def test_run_trials_rejects_zero_trials(orthogonal_code) -> None:
    e, code = orthogonal_code
    with pytest.raises(ValidationFailure):
        run_trials(code, e, 0, seed=1)


def test_fano_bound_values() -> None:
    assert fano_bound(0.01, 10, 4) == pytest.approx(0.2807931, abs=1e-6)
    assert fano_bound(0.5, 1, 2) == pytest.approx(1.0)
    assert fano_bound(0.0, 3, 2) == 0.0
    assert fano_bound(0.3, 5, 1) == pytest.approx(-(0.3 * math.log2(0.3) + 0.7 * math.log2(0.7)))
    with pytest.raises(ValidationFailure):
        fano_bound(1.2, 1, 2)


def test_converse_chain_on_exact_orthogonal_cover() -> None:
    e = orthogonal_pair_ensemble()
    code = greedy_cover(e, 3, 0.2, 0.5, rng_seed=1, drop_reserved_index=True)
    ledger = converse_audit(code, e, 0.0)
    assert ledger.chain_values == pytest.approx((3.0, 3.0, 3.0, 2.0), abs=1e-9)
    assert ledger.H_I == pytest.approx(0.0, abs=1e-12)
    assert ledger.H_X_given_IJ == pytest.approx(0.0, abs=1e-9)
    assert ledger.I_XJ_given_I == pytest.approx(3.0, abs=1e-9)
    assert ledger.chain_monotone is True
    assert ledger.fano_consistent is True
    assert ledger.verdict
    assert ledger.omitted_reason is None


def test_converse_chain_with_reserved_index(orthogonal_code) -> None:
    e, code = orthogonal_code
    p_e = exact_code_metrics(code, e).P_e
    ledger = converse_audit(code, e, p_e)
    left, middle_a, middle_b, right = ledger.chain_values
    assert left == pytest.approx(4 * 0.25 + 4 * 1.0)
    assert left >= middle_a - 1e-8
    assert middle_a == pytest.approx(middle_b, abs=1e-9)
    assert middle_b >= right - 1e-8
    assert ledger.chain_monotone
    assert ledger.fano_consistent
    assert ledger.H_X_given_IJ <= ledger.fano_bound + 1e-9


def test_converse_middle_terms_can_be_omitted(orthogonal_code) -> None:
    e, code = orthogonal_code
    skipped = converse_audit(code, e, 0.125, exact=False)
    assert skipped.omitted_reason == "exact metrics disabled"
    assert skipped.chain_values[1] is None
    assert skipped.chain_monotone is None
    assert skipped.verdict

    capped = converse_audit(code, e, 0.125, settings=Settings(max_exact_sequences=8))
    assert "exceeds" in capped.omitted_reason
    assert capped.H_I is None


def test_gentle_measurement_check() -> None:
    assert gentle_bound(0.02) == pytest.approx(0.42)
    check = gentle_measurement_check(0.02, 0.3, epsilon_design=0.2)
    assert check.pass_measured
    assert check.pass_design
    assert check.binding == "measured"
    assert check.verdict

    tight = gentle_measurement_check(0.0, 0.1)
    assert not tight.pass_measured
    assert tight.bound_design is None
    assert tight.pass_design is None

    same = gentle_measurement_check(0.2, 0.0, epsilon_design=0.2)
    assert same.binding == "both"
    with pytest.raises(ValidationFailure):
        gentle_measurement_check(1.5, 0.0)
    with pytest.raises(ValidationFailure):
        gentle_measurement_check(0.1, 0.0, epsilon_design=1.0)


def test_gentle_bound_holds_on_real_code(zero_plus_code) -> None:
    e, code = zero_plus_code
    metrics = exact_code_metrics(code, e)
    check = gentle_measurement_check(metrics.epsilon_hat, metrics.Delta, epsilon_design=code.epsilon)
    assert check.pass_measured
    assert check.pass_design


def test_reference_ensemble_matches_induced_ensemble() -> None:
    rho = np.diag([0.7, 0.3]).astype(np.complex128)
    by_trace = reference_ensemble(rho, bb84_povm())
    by_formula = induced_ensemble(rho, bb84_povm())
    assert by_trace.alphabet == by_formula.alphabet
    assert np.allclose(by_trace.probs, by_formula.probs, atol=1e-12)
    for a, b in zip(by_trace.states, by_formula.states):
        assert np.allclose(a.matrix, b.matrix, atol=1e-10)


def test_reference_ensemble_accepts_povm_completeness_slack() -> None:
    povm = validate_povm([ket_projector([1.0, 0.0]), (1.0 + 5e-9) * ket_projector([0.0, 1.0])])
    e = reference_ensemble(np.eye(2) / 2.0, povm)
    assert float(e.probs.sum()) == pytest.approx(1.0, abs=1e-12)
    assert e.probs.tolist() == pytest.approx([0.5, 0.5], abs=1e-8)


def test_zero_plus_cover_at_six_letters(zero_plus_six) -> None:
    e, code = zero_plus_six
    for c in code.codes:
        assert c.max_error <= 0.2
    assert cover_audit(code, e).residual_ok

    exact = exact_code_metrics(code, e)
    ledger = converse_audit(code, e, exact.P_e)
    assert ledger.chain_monotone is True
    assert ledger.verdict
    assert gentle_measurement_check(exact.epsilon_hat, exact.Delta, epsilon_design=0.2).verdict


def test_monte_carlo_matches_exact_at_six_letters(zero_plus_six) -> None:
    e, code = zero_plus_six
    exact = exact_code_metrics(code, e)
    trials = 100_000
    summary = run_trials(code, e, trials, seed=7, keep_records=False)
    sigma = math.sqrt(exact.P_e * (1.0 - exact.P_e) / trials)
    assert abs(summary.P_e_hat - exact.P_e) <= 3 * sigma
    assert abs(summary.Delta_hat - exact.Delta) <= 3 * summary.Delta_stderr
