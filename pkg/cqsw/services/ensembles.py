from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.stats

from cqsw.core.errors import ValidationFailure
from cqsw.services.linalg import (
    COMPLETENESS_TOL,
    ComplexMatrix,
    DensityOperator,
    Povm,
    as_matrix,
    density_operator,
    eig_hermitian,
    kron_all,
    ket_projector,
    partial_trace,
    psd_sqrt,
    validate_povm,
    von_neumann_entropy,
)


PROB_TOL = 1e-10
OUTCOME_DROP = 1e-12

_SQRT_HALF = 1.0 / math.sqrt(2.0)

KETS: dict[str, npt.NDArray[np.complex128]] = {
    "0": np.array([1.0, 0.0], dtype=np.complex128),
    "1": np.array([0.0, 1.0], dtype=np.complex128),
    "+": np.array([_SQRT_HALF, _SQRT_HALF], dtype=np.complex128),
    "-": np.array([_SQRT_HALF, -_SQRT_HALF], dtype=np.complex128),
    "+i": np.array([_SQRT_HALF, 1j * _SQRT_HALF], dtype=np.complex128),
    "-i": np.array([_SQRT_HALF, -1j * _SQRT_HALF], dtype=np.complex128),
}


@dataclass(frozen=True, eq=False)
class CqEnsemble:
    alphabet: tuple[str, ...]
    probs: npt.NDArray[np.float64]
    states: tuple[DensityOperator, ...]

    @property
    def dim(self) -> int:
        return self.states[0].dim

    @property
    def size(self) -> int:
        return len(self.alphabet)

    def index_of(self, label: str) -> int:
        try:
            return self.alphabet.index(label)
        except ValueError as exc:
            raise ValidationFailure(f"unknown alphabet symbol {label!r}") from exc


@dataclass(frozen=True, eq=False)
class SequenceState:
    sequence: tuple[int, ...]
    state: DensityOperator
    prob: float


@dataclass(frozen=True)
class EntropyReport:
    H_X: float
    H_Q: float
    H_Q_given_X: float
    chi: float
    H_X_given_Q: float
    H_XQ: float
    I_XQ_ehs: float
    # H(X|Q) along the three routes; they must agree
    H_X_given_Q_definitional: float
    H_X_given_Q_chi_route: float
    H_X_given_Q_ehs_route: float


@dataclass(frozen=True)
class CornerPoint:
    name: str
    rate_x: float
    rate_q: float
    status: str


def validate_probs(probs: npt.ArrayLike, *, field_path: str | None = None) -> npt.NDArray[np.float64]:
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValidationFailure("probability vector is empty", field_path=field_path)
    if not np.all(np.isfinite(p)):
        raise ValidationFailure("probability vector has non-finite entries", field_path=field_path)
    if np.any(p < 0.0):
        raise ValidationFailure("probabilities must be non-negative", field_path=field_path)
    total = float(p.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise ValidationFailure(
            f"probabilities must sum to 1 within 1e-10, got {total:.15g}",
            field_path=field_path,
        )
    return p


def make_ensemble(
    alphabet: Sequence[str],
    probs: npt.ArrayLike,
    states: Sequence[npt.ArrayLike | DensityOperator],
) -> CqEnsemble:
    labels = tuple(str(x) for x in alphabet)
    if len(set(labels)) != len(labels):
        raise ValidationFailure("alphabet symbols must be distinct", field_path="alphabet")
    p = validate_probs(probs, field_path="probs")
    if len(labels) != p.size or len(states) != p.size:
        raise ValidationFailure(
            f"alphabet ({len(labels)}), probs ({p.size}) and states ({len(states)}) differ in length"
        )
    ops: list[DensityOperator] = []
    for idx, state in enumerate(states):
        ops.append(density_operator(as_matrix(state), field_path=f"states[{idx}]"))
    dims = {op.dim for op in ops}
    if len(dims) != 1:
        raise ValidationFailure(f"states must share one dimension, got {sorted(dims)}", field_path="states")
    return CqEnsemble(alphabet=labels, probs=p, states=tuple(ops))


def bb84_ensemble() -> CqEnsemble:
    return make_ensemble(
        ["0", "1", "+", "-"],
        [0.25, 0.25, 0.25, 0.25],
        [ket_projector(KETS[k]) for k in ("0", "1", "+", "-")],
    )


def orthogonal_pair_ensemble() -> CqEnsemble:
    return make_ensemble(["0", "1"], [0.5, 0.5], [ket_projector(KETS["0"]), ket_projector(KETS["1"])])


def zero_plus_ensemble() -> CqEnsemble:
    return make_ensemble(["0", "+"], [0.5, 0.5], [ket_projector(KETS["0"]), ket_projector(KETS["+"])])


PRESET_ENSEMBLES = {
    "bb84": bb84_ensemble,
    "orthogonal-pair": orthogonal_pair_ensemble,
    "zero-plus": zero_plus_ensemble,
}


def bb84_povm() -> Povm:
    return validate_povm(
        [0.5 * ket_projector(KETS[k]) for k in ("0", "1", "+", "-")],
        labels=["0", "1", "+", "-"],
    )


def binary_entropy(p: float) -> float:
    if not (0.0 <= p <= 1.0):
        raise ValidationFailure(f"binary entropy needs p in [0, 1], got {p}")
    return float(scipy.stats.entropy([p, 1.0 - p], base=2))


def shannon_entropy(probs: npt.ArrayLike) -> float:
    p = validate_probs(probs)
    return float(scipy.stats.entropy(p, base=2))


def average_state(e: CqEnsemble) -> DensityOperator:
    total = np.zeros((e.dim, e.dim), dtype=np.complex128)
    for p, state in zip(e.probs, e.states):
        total += p * state.matrix
    return DensityOperator(matrix=total)


def ehs_state(e: CqEnsemble) -> DensityOperator:
    """Block-diagonal sum_x p(x) |x><x| (x) rho_x on dim |X|*d."""
    d = e.dim
    out = np.zeros((e.size * d, e.size * d), dtype=np.complex128)
    for x, (p, state) in enumerate(zip(e.probs, e.states)):
        out[x * d:(x + 1) * d, x * d:(x + 1) * d] = p * state.matrix
    return DensityOperator(matrix=out)


def conditional_q_entropy(e: CqEnsemble) -> float:
    return float(sum(p * von_neumann_entropy(s) for p, s in zip(e.probs, e.states)))


def holevo_information(e: CqEnsemble) -> float:
    chi = von_neumann_entropy(average_state(e)) - conditional_q_entropy(e)
    return max(0.0, chi)


def cqsw_rate(e: CqEnsemble) -> float:
    return max(0.0, shannon_entropy(e.probs) - holevo_information(e))


def conditional_entropy(rho_ab: npt.ArrayLike | DensityOperator, dims: Sequence[int], conditioning: int = 0) -> float:
    """H(B|A) = H(AB) - H(A) for a bipartite state, A = subsystem ``conditioning``."""
    if len(dims) != 2:
        raise ValidationFailure(f"conditional entropy needs two subsystems, got dims {list(dims)}")
    joint = as_matrix(rho_ab)
    marginal = partial_trace(joint, dims, {conditioning})
    return von_neumann_entropy(joint) - von_neumann_entropy(marginal)


def mutual_information(rho_ab: npt.ArrayLike | DensityOperator, dims: Sequence[int]) -> float:
    if len(dims) != 2:
        raise ValidationFailure(f"mutual information needs two subsystems, got dims {list(dims)}")
    joint = as_matrix(rho_ab)
    h_a = von_neumann_entropy(partial_trace(joint, dims, {0}))
    h_b = von_neumann_entropy(partial_trace(joint, dims, {1}))
    return h_a + h_b - von_neumann_entropy(joint)


def entropy_report(e: CqEnsemble) -> EntropyReport:
    h_x = shannon_entropy(e.probs)
    h_q = von_neumann_entropy(average_state(e))
    h_q_x = conditional_q_entropy(e)
    chi = holevo_information(e)
    ehs = ehs_state(e)
    dims = [e.size, e.dim]
    h_xq = von_neumann_entropy(ehs)
    # H(X|Q) = H(XQ) - H(Q) read off the embedded state
    h_q_ehs = von_neumann_entropy(partial_trace(ehs.matrix, dims, {1}))
    return EntropyReport(
        H_X=h_x,
        H_Q=h_q,
        H_Q_given_X=h_q_x,
        chi=chi,
        H_X_given_Q=cqsw_rate(e),
        H_XQ=h_xq,
        I_XQ_ehs=mutual_information(ehs.matrix, dims),
        H_X_given_Q_definitional=h_x + h_q_x - h_q,
        H_X_given_Q_chi_route=h_x - chi,
        H_X_given_Q_ehs_route=h_xq - h_q_ehs,
    )


def corner_points(e: CqEnsemble) -> list[CornerPoint]:
    report = entropy_report(e)
    return [
        CornerPoint("side-information", report.H_X_given_Q, report.H_Q, "achievable"),
        CornerPoint("classical-first", report.H_X, report.H_Q_given_X, "open"),
    ]


def classical_corner_points(joint: npt.ArrayLike) -> dict[str, float]:
    pxy = np.asarray(joint, dtype=np.float64)
    if pxy.ndim != 2:
        raise ValidationFailure(f"joint pmf must be a 2-d table, got shape {pxy.shape}")
    validate_probs(pxy.reshape(-1), field_path="joint")
    h_xy = float(scipy.stats.entropy(pxy.reshape(-1), base=2))
    h_x = float(scipy.stats.entropy(pxy.sum(axis=1), base=2))
    h_y = float(scipy.stats.entropy(pxy.sum(axis=0), base=2))
    return {
        "H_X_given_Y": h_xy - h_y,
        "H_Y": h_y,
        "H_X": h_x,
        "H_Y_given_X": h_xy - h_x,
        "sum_rate": h_xy,
    }


def outcome_ensemble(
    labels: Sequence[str],
    probs: Sequence[float],
    states: Sequence[npt.ArrayLike],
    *,
    dim: int,
    dropped: int = 0,
) -> CqEnsemble:
    """Ensemble whose probabilities come from measuring with a validated POVM.

    Their sum may miss 1 by the POVM's own completeness slack plus the dropped
    mass; within that they are rescaled, beyond it they are refused.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.size == 0:
        raise ValidationFailure("every measurement outcome has zero probability", field_path="probs")
    total = float(p.sum())
    slack = COMPLETENESS_TOL * dim + OUTCOME_DROP * dropped + PROB_TOL
    if abs(total - 1.0) > slack:
        raise ValidationFailure(
            f"outcome probabilities sum to {total:.15g}, beyond the POVM slack {slack:.3e}",
            field_path="probs",
        )
    return make_ensemble(labels, p / total, states)


def induced_ensemble(rho: npt.ArrayLike | DensityOperator, povm: Povm) -> CqEnsemble:
    """Ensemble of outcome X and purifying reference after measuring rho.

    rho_x = (1/p(x)) [sqrt(rho) L_x sqrt(rho)]^*, the conjugation taken in the
    canonical eigenbasis of rho. Outcomes with p(x) <= 1e-12 are dropped.
    """
    r = as_matrix(rho)
    if r.shape != (povm.dim, povm.dim):
        raise ValidationFailure(f"state dim {r.shape[0]} does not match POVM dim {povm.dim}")
    spectrum = eig_hermitian(r)
    v = spectrum.eigenvectors
    root = psd_sqrt(r)

    labels: list[str] = []
    probs: list[float] = []
    states: list[ComplexMatrix] = []
    for label, element in zip(povm.labels, povm.elements):
        p = float(np.real(np.trace(r @ element)))
        if p <= OUTCOME_DROP:
            continue
        sandwiched = root @ element @ root
        conjugated = v @ (v.conj().T @ sandwiched @ v).conj() @ v.conj().T
        labels.append(str(label))
        probs.append(p)
        states.append(conjugated / p)
    return outcome_ensemble(labels, probs, states, dim=povm.dim, dropped=len(povm) - len(labels))


def sequence_state(e: CqEnsemble, xn: Sequence[int]) -> SequenceState:
    seq = tuple(int(x) for x in xn)
    if not seq:
        raise ValidationFailure("sequence must have length n >= 1")
    for pos, x in enumerate(seq):
        if x < 0 or x >= e.size:
            raise ValidationFailure(f"sequence index {x} out of range at position {pos}")
    matrix = kron_all(e.states[x].matrix for x in seq)
    prob = float(np.prod([e.probs[x] for x in seq]))
    return SequenceState(sequence=seq, state=DensityOperator(matrix=matrix), prob=prob)


def sequence_label(e: CqEnsemble, xn: Sequence[int]) -> str:
    return " ".join(e.alphabet[int(x)] for x in xn)


def product_ensemble(e: CqEnsemble, n: int) -> CqEnsemble:
    if n < 1:
        raise ValidationFailure(f"n must be >= 1, got {n}")
    seqs = list(itertools.product(range(e.size), repeat=n))
    labels = [sequence_label(e, s) for s in seqs]
    probs = np.array([np.prod([e.probs[x] for x in s]) for s in seqs], dtype=np.float64)
    states = tuple(sequence_state(e, s).state for s in seqs)
    return CqEnsemble(alphabet=tuple(labels), probs=probs, states=states)
