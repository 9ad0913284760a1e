"""The two BB84 one-shot demonstrations: basis-bit source coding and measurement compression."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from cqsw.core.config import Settings, get_settings
from cqsw.core.errors import AssertionFailure
from cqsw.services.coding import CodeMetrics, CqswCode, exact_code_metrics, fixed_cover
from cqsw.services.ensembles import (
    KETS,
    CqEnsemble,
    EntropyReport,
    bb84_ensemble,
    bb84_povm,
    cqsw_rate,
    entropy_report,
    holevo_information,
    induced_ensemble,
    make_ensemble,
)
from cqsw.services.linalg import Povm, ket_projector, validate_povm
from cqsw.services.protocol import ConverseLedger, converse_audit, reference_ensemble


logger = logging.getLogger(__name__)

EXACT_TOL = 1e-10
BASIS_GROUPS = (((0,), (1,)), ((2,), (3,)))


@dataclass(frozen=True, eq=False)
class OneShotReport:
    ensemble: CqEnsemble
    code: CqswCode
    entropies: EntropyReport
    metrics: CodeMetrics
    ledger: ConverseLedger
    rate: float
    rate_with_reserved: float
    benchmark_rate: float
    assertions: dict[str, bool]


@dataclass(frozen=True, eq=False)
class OutcomeCorrelation:
    label: str
    prob_direct: float
    prob_simulated: float
    state_gap: float


@dataclass(frozen=True, eq=False)
class MeasurementCompressionReport:
    direct: CqEnsemble
    simulated: CqEnsemble
    purified: CqEnsemble
    outcomes: tuple[OutcomeCorrelation, ...]
    direct_bits: float
    communication_bits: float
    shared_random_bits: float
    mutual_information: float
    conditional_entropy: float
    assertions: dict[str, bool]


def _raise_on_failures(what: str, assertions: dict[str, bool]) -> None:
    failed = [name for name, ok in assertions.items() if not ok]
    if failed:
        raise AssertionFailure(f"{what} failed: {', '.join(failed)}", failed=failed)


def bb84_oneshot(*, delta: float = 0.5, epsilon: float = 0.01, settings: Settings | None = None) -> OneShotReport:
    """Alice sends only the basis bit; Bob measures in that basis and learns x exactly."""
    settings = settings or get_settings()
    e = bb84_ensemble()
    code = fixed_cover(e, 1, BASIS_GROUPS, epsilon, delta, drop_reserved_index=True, settings=settings)
    metrics = exact_code_metrics(code, e, settings=settings)
    entropies = entropy_report(e)
    ledger = converse_audit(code, e, metrics.P_e, settings=settings)
    assertions = {
        "rate_is_one_bit": abs(code.rate - 1.0) <= EXACT_TOL,
        "P_e_zero": metrics.P_e <= EXACT_TOL,
        "Delta_zero": metrics.Delta <= EXACT_TOL,
        "H_X_two_bits": abs(entropies.H_X - 2.0) <= EXACT_TOL,
        "chi_one_bit": abs(entropies.chi - 1.0) <= EXACT_TOL,
        "H_X_given_Q_one_bit": abs(entropies.H_X_given_Q - 1.0) <= EXACT_TOL,
        "converse_verdict": ledger.verdict,
    }
    _raise_on_failures("bb84 one-shot", assertions)
    logger.info("bb84 one-shot: rate %.12g, P_e %.3g, Delta %.3g", code.rate, metrics.P_e, metrics.Delta)
    return OneShotReport(
        ensemble=e,
        code=code,
        entropies=entropies,
        metrics=metrics,
        ledger=ledger,
        rate=code.rate,
        rate_with_reserved=math.log2(len(code.codes) + 1) / code.n,
        benchmark_rate=entropies.H_X_given_Q,
        assertions=assertions,
    )


def _basis_povm(basis: int) -> Povm:
    kets = ("0", "1") if basis == 0 else ("+", "-")
    return validate_povm([ket_projector(KETS[k]) for k in kets], labels=list(kets))


def bb84_measurement_compression() -> MeasurementCompressionReport:
    """Direct four-outcome BB84 measurement of I/2 against one shared random basis bit plus one sent bit.

    Both procedures are compared on the outcome-reference correlations they
    induce with a purification of I/2.
    """
    rho = np.eye(2, dtype=np.complex128) / 2.0
    povm = bb84_povm()
    direct = induced_ensemble(rho, povm)
    purified = reference_ensemble(rho, povm)

    labels: list[str] = []
    probs: list[float] = []
    states: list[np.ndarray] = []
    for basis in (0, 1):
        half = induced_ensemble(rho, _basis_povm(basis))
        for label, p, state in zip(half.alphabet, half.probs, half.states):
            labels.append(label)
            probs.append(0.5 * float(p))
            states.append(state.matrix)
    simulated = make_ensemble(labels, probs, states)

    outcomes: list[OutcomeCorrelation] = []
    for label in direct.alphabet:
        i = direct.index_of(label)
        k = simulated.index_of(label)
        gap = float(np.max(np.abs(direct.states[i].matrix - simulated.states[k].matrix)))
        outcomes.append(OutcomeCorrelation(label, float(direct.probs[i]), float(simulated.probs[k]), gap))

    purified_gap = max(
        float(np.max(np.abs(purified.states[purified.index_of(label)].matrix - direct.states[direct.index_of(label)].matrix)))
        for label in direct.alphabet
    )
    assertions = {
        "same_outcome_set": set(direct.alphabet) == set(simulated.alphabet),
        "distribution_equal": all(abs(o.prob_direct - o.prob_simulated) <= EXACT_TOL for o in outcomes),
        "uniform_marginal": all(abs(o.prob_direct - 0.25) <= EXACT_TOL for o in outcomes),
        "reference_states_equal": all(o.state_gap <= EXACT_TOL for o in outcomes),
        "purification_route_agrees": purified_gap <= EXACT_TOL,
    }
    _raise_on_failures("bb84 measurement compression", assertions)
    return MeasurementCompressionReport(
        direct=direct,
        simulated=simulated,
        purified=purified,
        outcomes=tuple(outcomes),
        direct_bits=math.log2(len(direct.alphabet)),
        communication_bits=1.0,
        shared_random_bits=1.0,
        mutual_information=holevo_information(direct),
        conditional_entropy=cqsw_rate(direct),
        assertions=assertions,
    )
