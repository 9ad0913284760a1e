from __future__ import annotations

import itertools
import logging
import math
from collections import defaultdict
from collections.abc import Hashable
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.special

from cqsw.core.config import Settings, get_settings
from cqsw.core.errors import ValidationFailure
from cqsw.core.workers import map_in_order
from cqsw.services.coding import FAIL_LABEL, Codeword, CqswCode, decode, encode
from cqsw.services.ensembles import (
    OUTCOME_DROP,
    CqEnsemble,
    binary_entropy,
    holevo_information,
    outcome_ensemble,
    sequence_state,
    shannon_entropy,
)
from cqsw.services.linalg import (
    Povm,
    as_matrix,
    partial_trace,
    purification,
    trace_distance,
)
from cqsw.services.measurement import (
    INSTRUMENT,
    born_probabilities,
    kraus_roots,
    outcome_averaged_state,
    post_measurement_state,
)


logger = logging.getLogger(__name__)

CHAIN_TOL = 1e-8
GENTLE_TOL = 1e-8

__all__ = [
    "INSTRUMENT",
    "ConverseLedger",
    "GentleCheck",
    "TrialRecord",
    "TrialSummary",
    "born_probabilities",
    "converse_audit",
    "fano_bound",
    "gentle_bound",
    "gentle_measurement_check",
    "outcome_averaged_state",
    "post_measurement_state",
    "reference_ensemble",
    "run_trials",
]


@dataclass(frozen=True)
class TrialRecord:
    xn: Codeword
    encoded_index: int
    outcome: Hashable
    decoded: Codeword | None
    correct: bool
    disturbance: float


@dataclass(frozen=True)
class TrialSummary:
    trials: int
    P_e_hat: float
    P_e_stderr: float
    Delta_hat: float
    Delta_stderr: float
    records: tuple[TrialRecord, ...]


@dataclass(frozen=True)
class ConverseLedger:
    n: int
    R: float
    P_e: float
    H_X: float
    chi: float
    fano_bound: float
    # nR + n chi, H(I) + I(X^n;J|I), I(X^n;IJ), n(H(X) - 1/n - P_e log2|X|)
    chain_values: tuple[float | None, float | None, float | None, float]
    H_I: float | None
    I_XJ_given_I: float | None
    H_X_given_IJ: float | None
    chain_monotone: bool | None
    fano_consistent: bool | None
    omitted_reason: str | None
    verdict: bool


@dataclass(frozen=True)
class GentleCheck:
    delta_measured: float
    epsilon_measured: float
    bound_measured: float
    pass_measured: bool
    epsilon_design: float | None
    bound_design: float | None
    pass_design: bool | None
    binding: str

    @property
    def verdict(self) -> bool:
        return self.pass_measured


class _SequenceOutcomes:
    """Born distribution and outcome-averaged disturbance per x^n, computed once."""

    def __init__(self, code: CqswCode, e: CqEnsemble) -> None:
        self.code = code
        self.e = e
        self.roots = [kraus_roots(c.decoder) for c in code.codes]
        self._cache: dict[Codeword, tuple[int, npt.NDArray[np.float64], float]] = {}

    def lookup(self, xn: Codeword) -> tuple[int, npt.NDArray[np.float64], float]:
        hit = self._cache.get(xn)
        if hit is not None:
            return hit
        index = encode(self.code, xn)
        if index > len(self.code.codes):
            hit = (index, np.ones(1, dtype=np.float64), 0.0)
        else:
            decoder = self.code.codes[index - 1].decoder
            rho = sequence_state(self.e, xn).state.matrix
            probs = born_probabilities(rho, decoder)
            averaged = outcome_averaged_state(rho, decoder, self.roots[index - 1])
            hit = (index, probs / probs.sum(), trace_distance(averaged, rho))
        self._cache[xn] = hit
        return hit


def _mean_and_stderr(values: npt.NDArray[np.float64]) -> tuple[float, float]:
    mean = float(np.mean(values))
    if values.size < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(values.size))


def run_trials(
    code: CqswCode,
    e: CqEnsemble,
    trials: int,
    seed: int,
    *,
    keep_records: bool = True,
    settings: Settings | None = None,
) -> TrialSummary:
    """Monte Carlo runs of the protocol.

    Trials are cut into blocks of ``trial_block``; block b draws from
    ``default_rng([seed, b])`` so the result does not depend on the worker count.
    """
    settings = settings or get_settings()
    if trials < 1:
        raise ValidationFailure(f"trials must be >= 1, got {trials}")
    block = settings.trial_block
    outcomes = _SequenceOutcomes(code, e)
    spans = [(b, min(block, trials - b * block)) for b in range(math.ceil(trials / block))]

    def run_block(span: tuple[int, int]) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], list[TrialRecord]]:
        b, size = span
        rng = np.random.default_rng([int(seed), b])
        letters = rng.choice(e.size, size=(size, code.n), p=e.probs)
        errors = np.zeros(size, dtype=np.float64)
        disturbances = np.zeros(size, dtype=np.float64)
        records: list[TrialRecord] = []
        for t in range(size):
            xn = tuple(int(x) for x in letters[t])
            index, probs, disturbance = outcomes.lookup(xn)
            j = int(rng.choice(probs.size, p=probs))
            if index > len(code.codes):
                label: Hashable = FAIL_LABEL
            else:
                label = code.codes[index - 1].decoder.labels[j]
            decoded = decode(code, index, label)
            correct = decoded == xn
            errors[t] = 0.0 if correct else 1.0
            disturbances[t] = disturbance
            if keep_records:
                records.append(TrialRecord(xn, index, label, decoded, correct, disturbance))
        return errors, disturbances, records

    parts = map_in_order(run_block, spans, settings.workers)
    errors = np.concatenate([p[0] for p in parts])
    disturbances = np.concatenate([p[1] for p in parts])
    p_e, p_e_err = _mean_and_stderr(errors)
    delta, delta_err = _mean_and_stderr(disturbances)
    logger.info("%d trials: P_e_hat=%.6g (+/- %.2g), Delta_hat=%.6g", trials, p_e, p_e_err, delta)
    return TrialSummary(
        trials=trials,
        P_e_hat=p_e,
        P_e_stderr=p_e_err,
        Delta_hat=delta,
        Delta_stderr=delta_err,
        records=tuple(r for p in parts for r in p[2]),
    )


def fano_bound(p_error: float, n: int, alphabet_size: int) -> float:
    """h2(P_e) + P_e log2(|X|^n - 1), with |X|^n handled in log space.

    A single-sequence alphabet leaves only the h2 term.
    """
    if not 0.0 <= p_error <= 1.0:
        raise ValidationFailure(f"P_e must lie in [0, 1], got {p_error}")
    if n < 1 or alphabet_size < 1:
        raise ValidationFailure(f"need n >= 1 and |X| >= 1, got n={n}, |X|={alphabet_size}")
    h2 = binary_entropy(p_error)
    if alphabet_size == 1 or p_error == 0.0:
        return h2
    log_size = n * math.log2(alphabet_size)
    # log2(K - 1) = log2 K + log2(1 - 1/K)
    log_minus_one = log_size + math.log1p(-(2.0 ** -log_size)) / math.log(2.0)
    return h2 + p_error * log_minus_one


def _bits(values: list[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    return float(np.sum(scipy.special.entr(arr)) / math.log(2.0))


def converse_audit(
    code: CqswCode,
    e: CqEnsemble,
    p_error: float,
    *,
    exact: bool = True,
    settings: Settings | None = None,
) -> ConverseLedger:
    """Both ends of the converse chain, plus the middle terms when X^n is small enough.

    The verdict compares nR + n chi against n(H(X) - 1/n - P_e log2|X|).
    """
    settings = settings or get_settings()
    if not 0.0 <= p_error <= 1.0:
        raise ValidationFailure(f"P_e must lie in [0, 1], got {p_error}")
    n = code.n
    h_x = shannon_entropy(e.probs)
    chi = holevo_information(e)
    left = n * code.rate + n * chi
    right = n * (h_x - 1.0 / n - p_error * math.log2(e.size))
    fano = fano_bound(p_error, n, e.size)

    h_i = i_xj = h_x_ij = None
    middle: tuple[float | None, float | None] = (None, None)
    monotone = fano_ok = None
    reason: str | None = None
    total = e.size**n
    if not exact:
        reason = "exact metrics disabled"
    elif total > settings.max_exact_sequences:
        reason = f"|X|^n = {total} exceeds CQSW_MAX_EXACT_SEQUENCES={settings.max_exact_sequences}"
        logger.warning("converse chain middle terms omitted: %s", reason)
    else:
        outcomes = _SequenceOutcomes(code, e)
        seq_probs: list[float] = []
        joint_x_ij: list[float] = []
        by_ij: dict[tuple[int, int], float] = defaultdict(float)
        by_i: dict[int, float] = defaultdict(float)
        for word in itertools.product(range(e.size), repeat=n):
            p = sequence_state(e, word).prob
            if p <= 0.0:
                continue
            index, probs, _ = outcomes.lookup(word)
            seq_probs.append(p)
            by_i[index] += p
            for j, q in enumerate(probs):
                joint_x_ij.append(p * float(q))
                by_ij[(index, j)] += p * float(q)
        h_xn = _bits(seq_probs)
        h_i = _bits(list(by_i.values()))
        h_x_ij = _bits(joint_x_ij) - _bits(list(by_ij.values()))
        i_xj = (h_xn - h_i) - h_x_ij
        middle = (h_i + i_xj, h_xn - h_x_ij)
        monotone = (
            left >= middle[0] - CHAIN_TOL
            and middle[0] >= middle[1] - CHAIN_TOL
            and middle[1] >= right - CHAIN_TOL
        )
        fano_ok = h_x_ij <= fano + CHAIN_TOL

    return ConverseLedger(
        n=n,
        R=code.rate,
        P_e=p_error,
        H_X=h_x,
        chi=chi,
        fano_bound=fano,
        chain_values=(left, middle[0], middle[1], right),
        H_I=h_i,
        I_XJ_given_I=i_xj,
        H_X_given_IJ=h_x_ij,
        chain_monotone=monotone,
        fano_consistent=fano_ok,
        omitted_reason=reason,
        verdict=left >= right - CHAIN_TOL,
    )


def gentle_bound(epsilon: float) -> float:
    return math.sqrt(8.0 * epsilon) + epsilon


def gentle_measurement_check(
    epsilon_used: float,
    delta_measured: float,
    *,
    epsilon_design: float | None = None,
) -> GentleCheck:
    if not 0.0 <= epsilon_used <= 1.0:
        raise ValidationFailure(f"measured epsilon must lie in [0, 1], got {epsilon_used}")
    if epsilon_design is not None and not 0.0 < epsilon_design < 1.0:
        raise ValidationFailure(f"design epsilon must lie in (0, 1), got {epsilon_design}")
    bound = gentle_bound(epsilon_used)
    design_bound = None if epsilon_design is None else gentle_bound(epsilon_design)
    if design_bound is None:
        binding = "measured"
    elif math.isclose(bound, design_bound):
        binding = "both"
    else:
        binding = "measured" if bound < design_bound else "design"
    return GentleCheck(
        delta_measured=delta_measured,
        epsilon_measured=epsilon_used,
        bound_measured=bound,
        pass_measured=delta_measured <= bound + GENTLE_TOL,
        epsilon_design=epsilon_design,
        bound_design=design_bound,
        pass_design=None if design_bound is None else delta_measured <= design_bound + GENTLE_TOL,
        binding=binding,
    )


def reference_ensemble(rho: npt.ArrayLike, povm: Povm) -> CqEnsemble:
    """Outcome ensemble of a purifying reference, by partial trace.

    Measures the system half of the canonical purification of rho; outcomes
    with probability at most 1e-12 are dropped.
    """
    r = as_matrix(rho)
    d = povm.dim
    if r.shape != (d, d):
        raise ValidationFailure(f"state dim {r.shape[0]} does not match POVM dim {d}")
    psi = purification(r)
    joint = np.outer(psi, psi.conj())
    eye = np.eye(d, dtype=np.complex128)
    labels: list[str] = []
    probs: list[float] = []
    states: list[npt.NDArray[np.complex128]] = []
    for label, element in zip(povm.labels, povm.elements):
        measured = np.kron(element, eye) @ joint
        reference = partial_trace(measured, [d, d], {1})
        p = float(np.real(np.trace(reference)))
        if p <= OUTCOME_DROP:
            continue
        reference = reference / p
        labels.append(str(label))
        probs.append(p)
        states.append((reference + reference.conj().T) / 2.0)
    return outcome_ensemble(labels, probs, states, dim=d, dropped=len(povm) - len(labels))
