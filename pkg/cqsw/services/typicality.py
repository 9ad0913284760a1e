from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.special

from cqsw.core.config import Settings, get_settings
from cqsw.core.errors import ResourceCapExceeded, ValidationFailure
from cqsw.services.ensembles import CqEnsemble, validate_probs
from cqsw.services.linalg import (
    ComplexMatrix,
    DensityOperator,
    as_matrix,
    eig_hermitian,
    kron_all,
    von_neumann_entropy,
)


WINDOW_SLACK = 1e-12
BOUND_SLACK = 1e-9
_ENUM_CHUNK = 1 << 16


@dataclass(frozen=True)
class DimensionBounds:
    log2_size: float
    lower: float
    upper: float
    finite_lower: float
    upper_ok: bool
    finite_lower_ok: bool
    raw_lower_ok: bool


@dataclass(frozen=True, eq=False)
class TypicalSet:
    n: int
    delta: float
    delta_prime: float
    entropy: float
    probs: npt.NDArray[np.float64]
    members: npt.NDArray[np.int64]
    member_probs: npt.NDArray[np.float64]
    total_prob: float

    @property
    def size(self) -> int:
        return int(self.members.shape[0])

    def contains(self, xn: Sequence[int]) -> bool:
        return is_typical_sequence(xn, self.probs, self.delta)

    def bounds(self) -> DimensionBounds:
        return dimension_bounds(self.size, self.n, self.entropy, self.delta_prime, self.total_prob)


@dataclass(frozen=True, eq=False)
class TypicalProjector:
    n: int
    delta: float
    projector: ComplexMatrix
    basis: ComplexMatrix
    subspace_dim: int
    entropy: float
    width: float
    capture: float

    def bounds(self) -> DimensionBounds:
        return dimension_bounds(self.subspace_dim, self.n, self.entropy, self.width, self.capture)


def _check_params(n: int, delta: float) -> None:
    if n < 1:
        raise ValidationFailure(f"n must be >= 1, got {n}")
    if not delta > 0.0:
        raise ValidationFailure(f"delta must be > 0, got {delta}")


def _compositions(n: int, k: int) -> Iterator[tuple[int, ...]]:
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, k - 1):
            yield (first,) + rest


def _neg_log2(values: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    out = np.full(values.shape, np.inf)
    positive = values > 0.0
    out[positive] = -np.log2(values[positive])
    return out


def _frequency_typical(counts: npt.NDArray[np.int64], probs: npt.NDArray[np.float64], n: int, delta: float) -> npt.NDArray[np.bool_]:
    freq = counts / float(n)
    close = np.all(np.abs(freq - probs) <= delta + WINDOW_SLACK, axis=-1)
    no_impossible = np.all((probs > 0.0) | (counts == 0), axis=-1)
    return close & no_impossible


def implied_delta_prime(probs: npt.ArrayLike, delta: float) -> float:
    p = np.asarray(probs, dtype=np.float64)
    return float(delta * np.sum(np.abs(np.log2(p[p > 0.0]))))


def dimension_bounds(size: int, n: int, entropy: float, width: float, mass: float) -> DimensionBounds:
    """Cardinality/dimension window 2^{n(H -/+ width)} for an exact count.

    The upper bound always holds. The finite-n lower bound carries the
    captured mass: size >= mass * 2^{n(H - width)}.
    """
    log2_size = math.log2(size) if size > 0 else -math.inf
    lower = n * (entropy - width)
    upper = n * (entropy + width)
    finite_lower = (math.log2(mass) + lower) if mass > 0.0 else -math.inf
    return DimensionBounds(
        log2_size=log2_size,
        lower=lower,
        upper=upper,
        finite_lower=finite_lower,
        upper_ok=log2_size <= upper + BOUND_SLACK,
        finite_lower_ok=(mass <= 0.0) or log2_size >= finite_lower - BOUND_SLACK,
        raw_lower_ok=log2_size >= lower - BOUND_SLACK,
    )


def is_typical_sequence(xn: Sequence[int], probs: npt.ArrayLike, delta: float) -> bool:
    p = np.asarray(probs, dtype=np.float64)
    seq = np.asarray(list(xn), dtype=np.int64)
    if seq.size == 0:
        raise ValidationFailure("sequence must have length n >= 1")
    if seq.min() < 0 or seq.max() >= p.size:
        raise ValidationFailure(f"sequence has indices outside alphabet of size {p.size}")
    counts = np.bincount(seq, minlength=p.size)
    return bool(_frequency_typical(counts, p, int(seq.size), delta))


def typical_set_probability(probs: npt.ArrayLike, n: int, delta: float) -> float:
    """Exact Pr{X^n in T} summed over type classes, no sequence enumeration."""
    p = validate_probs(probs)
    _check_params(n, delta)
    log2p = np.where(p > 0.0, np.log2(np.where(p > 0.0, p, 1.0)), -np.inf)
    terms: list[float] = []
    for counts in _compositions(n, p.size):
        c = np.asarray(counts, dtype=np.int64)
        if not _frequency_typical(c, p, n, delta):
            continue
        log_coeff = (scipy.special.gammaln(n + 1) - np.sum(scipy.special.gammaln(c + 1))) / math.log(2.0)
        log_prob = float(np.sum(c[c > 0] * log2p[c > 0]))
        terms.append(2.0 ** (log_coeff + log_prob))
    return math.fsum(terms)


def typical_set(
    probs: npt.ArrayLike,
    n: int,
    delta: float,
    *,
    settings: Settings | None = None,
) -> TypicalSet:
    settings = settings or get_settings()
    p = validate_probs(probs)
    _check_params(n, delta)
    k = p.size
    total = k**n
    if total > settings.max_enumeration:
        raise ResourceCapExceeded(
            "typical-set enumeration",
            requested=total,
            cap=settings.max_enumeration,
            advisory="test membership with is_typical_sequence or use typical_set_probability",
        )

    log2p = np.where(p > 0.0, np.log2(np.where(p > 0.0, p, 1.0)), 0.0)
    powers = k ** np.arange(n - 1, -1, -1, dtype=np.int64)
    member_chunks: list[npt.NDArray[np.int64]] = []
    prob_chunks: list[npt.NDArray[np.float64]] = []
    for start in range(0, total, _ENUM_CHUNK):
        codes = np.arange(start, min(total, start + _ENUM_CHUNK), dtype=np.int64)
        digits = (codes[:, None] // powers[None, :]) % k
        counts = np.stack([(digits == x).sum(axis=1) for x in range(k)], axis=1)
        mask = _frequency_typical(counts, p, n, delta)
        if not np.any(mask):
            continue
        member_chunks.append(digits[mask])
        prob_chunks.append(np.exp2(counts[mask] @ log2p))

    if member_chunks:
        members = np.concatenate(member_chunks, axis=0)
        member_probs = np.concatenate(prob_chunks)
    else:
        members = np.zeros((0, n), dtype=np.int64)
        member_probs = np.zeros(0, dtype=np.float64)
    return TypicalSet(
        n=n,
        delta=delta,
        delta_prime=implied_delta_prime(p, delta),
        entropy=float(-np.sum(p[p > 0.0] * np.log2(p[p > 0.0]))),
        probs=p,
        members=members,
        member_probs=member_probs,
        total_prob=math.fsum(member_probs.tolist()),
    )


def _eigen_window(eigenvalues: npt.NDArray[np.float64], n: int, entropy: float, delta: float) -> tuple[npt.NDArray[np.bool_], npt.NDArray[np.float64]]:
    # -log2 of every eigenvalue product, index tuples in kron order
    neglog = _neg_log2(np.clip(eigenvalues, 0.0, None))
    total = neglog.copy()
    for _ in range(n - 1):
        total = np.add.outer(total, neglog).reshape(-1)
    mask = np.abs(total / n - entropy) <= delta + WINDOW_SLACK
    return mask, total


def typical_capture(rho: npt.ArrayLike | DensityOperator, n: int, delta: float) -> tuple[float, int]:
    """Exact (Tr(rho^{(x)n} Pi), dim Pi) from eigenvalue types, no matrices."""
    _check_params(n, delta)
    lam = np.clip(eig_hermitian(as_matrix(rho)).eigenvalues, 0.0, None)
    entropy = von_neumann_entropy(rho)
    neglog = _neg_log2(lam)
    capture_terms: list[float] = []
    dim = 0
    for counts in _compositions(n, lam.size):
        c = np.asarray(counts, dtype=np.int64)
        used = c > 0
        score = float(np.sum(c[used] * neglog[used]))
        if not abs(score / n - entropy) <= delta + WINDOW_SLACK:
            continue
        multiplicity = math.factorial(n)
        for ci in counts:
            multiplicity //= math.factorial(ci)
        dim += multiplicity
        capture_terms.append(multiplicity * 2.0 ** (-score))
    return math.fsum(capture_terms), dim


def _khatri_rao_columns(vectors: ComplexMatrix, digits: npt.NDArray[np.int64]) -> ComplexMatrix:
    # column j is vectors[:, digits[j, 0]] (x) vectors[:, digits[j, 1]] (x) ...
    count, n = digits.shape
    if count == 0:
        return np.zeros((vectors.shape[0] ** n, 0), dtype=np.complex128)
    cols = vectors[:, digits[:, 0]]
    for j in range(1, n):
        nxt = vectors[:, digits[:, j]]
        cols = (cols[:, None, :] * nxt[None, :, :]).reshape(-1, count)
    return cols


def _require_dim(dim: int, n: int, settings: Settings) -> int:
    total = dim**n
    if total > settings.max_dense_dim:
        raise ResourceCapExceeded(
            "dense dimension d^n",
            requested=total,
            cap=settings.max_dense_dim,
            advisory="lower n or raise CQSW_MAX_DENSE_DIM",
        )
    return total


def typical_projector(
    rho: npt.ArrayLike | DensityOperator,
    n: int,
    delta: float,
    *,
    settings: Settings | None = None,
) -> TypicalProjector:
    """Projector onto eigenvectors of rho^{(x)n} whose eigenvalue product is entropy-typical."""
    settings = settings or get_settings()
    _check_params(n, delta)
    mat = as_matrix(rho)
    d = mat.shape[0]
    _require_dim(d, n, settings)

    spectrum = eig_hermitian(mat)
    entropy = von_neumann_entropy(mat)
    mask, neglog_products = _eigen_window(spectrum.eigenvalues, n, entropy, delta)
    selected = np.nonzero(mask)[0]
    powers = d ** np.arange(n - 1, -1, -1, dtype=np.int64)
    digits = (selected[:, None] // powers[None, :]) % d
    basis = _khatri_rao_columns(spectrum.eigenvectors, digits)
    projector = basis @ basis.conj().T
    capture = math.fsum(np.exp2(-neglog_products[mask]).tolist())
    return TypicalProjector(
        n=n,
        delta=delta,
        projector=projector,
        basis=basis,
        subspace_dim=int(selected.size),
        entropy=entropy,
        width=delta,
        capture=capture,
    )


def _permute_positions(op: npt.NDArray[np.complex128], d: int, n: int, grouped: Sequence[int], trailing: int | None = None) -> npt.NDArray[np.complex128]:
    axes = list(np.argsort(np.asarray(grouped)))
    if trailing is None:
        tensor = op.reshape([d] * (2 * n))
        return tensor.transpose(axes + [n + a for a in axes]).reshape(d**n, d**n)
    tensor = op.reshape([d] * n + [trailing])
    return tensor.transpose(axes + [n]).reshape(d**n, trailing)


def cond_typical_projector(
    e: CqEnsemble,
    xn: Sequence[int],
    delta: float,
    *,
    settings: Settings | None = None,
) -> TypicalProjector:
    """Tensor product of per-letter typical projectors, put back in sequence order.

    The reported width is K*delta with K the number of distinct letters in xn;
    the entropy is the empirical conditional entropy sum_x N(x) H(rho_x) / n.
    """
    settings = settings or get_settings()
    seq = [int(x) for x in xn]
    n = len(seq)
    _check_params(n, delta)
    if min(seq) < 0 or max(seq) >= e.size:
        raise ValidationFailure(f"sequence has indices outside alphabet of size {e.size}")
    d = e.dim
    _require_dim(d, n, settings)

    letters = sorted(set(seq))
    grouped: list[int] = []
    blocks: list[TypicalProjector] = []
    for x in letters:
        positions = [pos for pos, letter in enumerate(seq) if letter == x]
        grouped.extend(positions)
        blocks.append(typical_projector(e.states[x], len(positions), delta, settings=settings))

    projector = _permute_positions(kron_all(b.projector for b in blocks), d, n, grouped)
    rank = int(np.prod([b.subspace_dim for b in blocks]))
    if rank:
        basis = _permute_positions(kron_all(b.basis for b in blocks), d, n, grouped, trailing=rank)
    else:
        basis = np.zeros((d**n, 0), dtype=np.complex128)
    empirical = sum(b.entropy * b.n for b in blocks) / n
    return TypicalProjector(
        n=n,
        delta=delta,
        projector=projector,
        basis=basis,
        subspace_dim=rank,
        entropy=empirical,
        width=len(letters) * delta,
        capture=float(np.prod([b.capture for b in blocks])),
    )
