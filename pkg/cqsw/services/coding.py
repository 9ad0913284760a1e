"""Channel codes with square-root-measurement decoders and the greedy disjoint cover.

Indices handed out by :func:`encode` are 1-based: codes are C_1..C_{M-1} and
M is the reserved "otherwise" index unless the cover was built with
``drop_reserved_index`` and is exact.
"""

from __future__ import annotations

import itertools
import logging
import math
import threading
from collections import OrderedDict
from collections.abc import Callable, Hashable, Iterable, Sequence
from dataclasses import dataclass
from typing import Generic, TypeVar

import numpy as np
import numpy.typing as npt

from cqsw.core.config import Settings, get_settings
from cqsw.core.errors import ConstructionFailure, CoverIncomplete, ResourceCapExceeded, ValidationFailure
from cqsw.core.workers import map_in_order, split_range
from cqsw.services.ensembles import (
    CqEnsemble,
    SequenceState,
    average_state,
    cqsw_rate,
    holevo_information,
    sequence_state,
    shannon_entropy,
)
from cqsw.services.linalg import (
    PINV_CUTOFF,
    ComplexMatrix,
    Povm,
    psd_inv_sqrt,
    trace_distance,
    validate_povm,
)
from cqsw.services.measurement import born_probabilities, kraus_roots, outcome_averaged_state
from cqsw.services.typicality import (
    TypicalProjector,
    cond_typical_projector,
    typical_projector,
    typical_set,
    typical_set_probability,
)


logger = logging.getLogger(__name__)

FAIL_LABEL = "fail"
ERROR_RECHECK_TOL = 1e-8
# eigenvalues of S inside (floor, cutoff] are neither support nor kernel
ILL_CONDITIONED_FLOOR = 1e-14

Codeword = tuple[int, ...]
T = TypeVar("T")


@dataclass(frozen=True, eq=False)
class ChannelCode:
    n: int
    codewords: tuple[Codeword, ...]
    decoder: Povm
    per_codeword_error: npt.NDArray[np.float64]
    epsilon: float
    delta: float

    @property
    def size(self) -> int:
        return len(self.codewords)

    @property
    def rate(self) -> float:
        return math.log2(self.size) / self.n if self.size else 0.0

    @property
    def max_error(self) -> float:
        return float(self.per_codeword_error.max(initial=0.0))


@dataclass(frozen=True, eq=False)
class CqswCode:
    n: int
    codes: tuple[ChannelCode, ...]
    M: int
    delta: float
    epsilon: float
    encoder_index: dict[Codeword, int]
    reserved_index: bool
    typical_prob: float
    uncovered_prob: float
    stop_reason: str

    @property
    def rate(self) -> float:
        return math.log2(self.M) / self.n

    @property
    def reserved(self) -> int | None:
        return self.M if self.reserved_index else None


@dataclass(frozen=True)
class CodeMetrics:
    P_e: float
    Delta: float
    epsilon_hat: float
    mean_deficit: float
    encoding_error_prob: float
    sequences: int


@dataclass(frozen=True)
class CoverAudit:
    residual_prob: float
    residual_bound: float
    residual_ok: bool
    rate: float
    rate_upper_target: float
    rate_within_upper: bool
    rate_floor: float
    rate_floor_ok: bool
    code_sizes: tuple[int, ...]
    size_target: float
    sizes_meeting_target: int
    total_error_bound: float
    total_error_ok: bool | None
    p_error_used: float | None = None


class _BoundedCache(Generic[T]):
    """Least-recently-used map holding at most ``budget`` bytes; the newest entry always stays."""

    def __init__(self, budget: int, size_of: Callable[[T], int]) -> None:
        self.budget = budget
        self._size_of = size_of
        self._items: OrderedDict[Codeword, T] = OrderedDict()
        self._bytes = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    @property
    def nbytes(self) -> int:
        return self._bytes

    def get_or_build(self, key: Codeword, build: Callable[[], T]) -> T:
        with self._lock:
            if key in self._items:
                self._items.move_to_end(key)
                return self._items[key]
        value = build()
        with self._lock:
            if key not in self._items:
                self._items[key] = value
                self._bytes += self._size_of(value)
            while self._bytes > self.budget and len(self._items) > 1:
                _, dropped = self._items.popitem(last=False)
                self._bytes -= self._size_of(dropped)
        return value


class _CodebookContext:
    """Typical projector of the average state plus per-sequence caches for one (e, n, delta)."""

    def __init__(self, e: CqEnsemble, n: int, delta: float, settings: Settings) -> None:
        self.e = e
        self.n = n
        self.delta = delta
        self.settings = settings
        self.average: TypicalProjector = typical_projector(average_state(e), n, delta, settings=settings)
        self._sandwiched: _BoundedCache[ComplexMatrix] = _BoundedCache(settings.cache_bytes, lambda m: m.nbytes)
        self._states: _BoundedCache[SequenceState] = _BoundedCache(settings.cache_bytes, lambda s: s.state.matrix.nbytes)

    def state(self, xn: Codeword) -> SequenceState:
        return self._states.get_or_build(xn, lambda: sequence_state(self.e, xn))

    def sandwiched(self, xn: Codeword) -> ComplexMatrix:
        def build() -> ComplexMatrix:
            pi = self.average.projector
            pi_c = cond_typical_projector(self.e, xn, self.delta, settings=self.settings).projector
            s_c = pi @ pi_c @ pi
            return (s_c + s_c.conj().T) / 2.0

        return self._sandwiched.get_or_build(xn, build)


def _as_codewords(codewords: Iterable[Sequence[int]]) -> tuple[Codeword, ...]:
    words = tuple(tuple(int(x) for x in c) for c in codewords)
    if not words:
        raise ValidationFailure("a code needs at least one codeword")
    if len(set(words)) != len(words):
        raise ValidationFailure("codewords must be distinct")
    lengths = {len(c) for c in words}
    if len(lengths) != 1:
        raise ValidationFailure(f"codewords have mixed lengths {sorted(lengths)}")
    return words


def _context(e: CqEnsemble, n: int, delta: float, settings: Settings | None, context: _CodebookContext | None) -> _CodebookContext:
    if context is not None:
        if context.e is not e or context.n != n or context.delta != delta:
            raise ValidationFailure("codebook context was built for a different ensemble, n or delta")
        return context
    return _CodebookContext(e, n, delta, settings or get_settings())


def srm_decoder(
    e: CqEnsemble,
    codewords: Iterable[Sequence[int]],
    delta: float,
    *,
    settings: Settings | None = None,
    context: _CodebookContext | None = None,
) -> Povm:
    """Square-root measurement over typicality-sandwiched codeword states.

    S_c = Pi Pi_c Pi, S = sum_c S_c, L_c = S^{-1/2} S_c S^{-1/2} with the
    pseudo-inverse taken on the support of S, plus a "fail" element.
    """
    words = _as_codewords(codewords)
    ctx = _context(e, len(words[0]), delta, settings, context)
    sandwiched = [ctx.sandwiched(c) for c in words]
    total = np.sum(sandwiched, axis=0)

    eigenvalues = np.linalg.eigvalsh(total)
    murky = eigenvalues[(eigenvalues > ILL_CONDITIONED_FLOOR) & (eigenvalues <= PINV_CUTOFF)]
    if murky.size:
        raise ConstructionFailure(
            f"square-root measurement is ill conditioned: {murky.size} eigenvalue(s) of S in "
            f"({ILL_CONDITIONED_FLOOR:g}, {PINV_CUTOFF:g}]",
            offending_error=float(murky.min()),
        )
    inv_root = psd_inv_sqrt(total, PINV_CUTOFF)

    elements: list[ComplexMatrix] = []
    for s_c in sandwiched:
        lam = inv_root @ s_c @ inv_root
        elements.append((lam + lam.conj().T) / 2.0)
    fail = np.eye(total.shape[0], dtype=np.complex128) - np.sum(elements, axis=0)
    elements.append((fail + fail.conj().T) / 2.0)
    return validate_povm(elements, labels=list(words) + [FAIL_LABEL])


def _codeword_errors(ctx: _CodebookContext, words: Sequence[Codeword], decoder: Povm) -> npt.NDArray[np.float64]:
    def one(item: tuple[int, Codeword]) -> float:
        j, word = item
        rho = ctx.state(word).state.matrix
        success = float(np.real(np.sum(rho * decoder.elements[j].T)))
        return min(1.0, max(0.0, 1.0 - success))

    errors = map_in_order(one, list(enumerate(words)), ctx.settings.workers)
    return np.asarray(errors, dtype=np.float64)


def _decode_and_score(ctx: _CodebookContext, words: list[Codeword]) -> tuple[Povm, npt.NDArray[np.float64]]:
    decoder = srm_decoder(ctx.e, words, ctx.delta, context=ctx)
    return decoder, _codeword_errors(ctx, words, decoder)


def _check_code_params(n: int, epsilon: float, delta: float) -> None:
    if n < 1:
        raise ValidationFailure(f"n must be >= 1, got {n}")
    if not 0.0 < epsilon < 1.0:
        raise ValidationFailure(f"epsilon must lie in (0, 1), got {epsilon}")
    if not delta > 0.0:
        raise ValidationFailure(f"delta must be > 0, got {delta}")


def _rng(seed: int | Sequence[int]) -> np.random.Generator:
    return np.random.default_rng(list(seed) if isinstance(seed, (list, tuple)) else seed)


def build_channel_code(
    e: CqEnsemble,
    n: int,
    epsilon: float,
    delta: float,
    candidates: Iterable[Sequence[int]],
    rng_seed: int | Sequence[int],
    *,
    eta: float | None = None,
    settings: Settings | None = None,
    context: _CodebookContext | None = None,
) -> ChannelCode:
    """Greedy randomized (n, epsilon) code inside the candidate set.

    Candidates are drawn p-weighted without replacement. After each addition
    the decoder is rebuilt and the worst codeword is evicted until every
    error is at most epsilon. Growth stops after max(4, 4|C|) consecutive
    candidates fail to enlarge the code.
    """
    settings = settings or get_settings()
    _check_code_params(n, epsilon, delta)
    eta = settings.eta if eta is None else eta
    pool = [tuple(int(x) for x in c) for c in candidates]
    if any(len(c) != n for c in pool):
        raise ValidationFailure(f"every candidate must have length n={n}")
    ctx = _context(e, n, delta, settings, context)

    weights = np.array([ctx.state(c).prob for c in pool], dtype=np.float64)
    mass = math.fsum(weights.tolist())
    if mass < eta:
        raise ValidationFailure(f"candidate set probability {mass:.6g} is below eta={eta:g}")
    keep = weights > 0.0
    pool = [c for c, k in zip(pool, keep) if k]
    weights = weights[keep]

    rng = _rng(rng_seed)
    order = rng.choice(len(pool), size=len(pool), replace=False, p=weights / weights.sum())

    code: list[Codeword] = []
    decoder: Povm | None = None
    errors = np.zeros(0, dtype=np.float64)
    stale = 0
    best_singleton = math.inf
    for pick in order:
        if stale >= max(4, 4 * len(code)):
            break
        trial = code + [pool[int(pick)]]
        trial_decoder, trial_errors = _decode_and_score(ctx, trial)
        while trial and trial_errors.max() > epsilon:
            worst = int(np.argmax(trial_errors))
            if len(trial) == 1:
                best_singleton = min(best_singleton, float(trial_errors[0]))
            logger.debug("evicting %s (error %.6g > %.6g)", trial[worst], trial_errors[worst], epsilon)
            del trial[worst]
            if trial:
                trial_decoder, trial_errors = _decode_and_score(ctx, trial)
        if not trial:
            stale += 1
            continue
        stale = 0 if len(trial) > len(code) else stale + 1
        code, decoder, errors = trial, trial_decoder, trial_errors

    if not code or decoder is None:
        raise ConstructionFailure(
            f"no codeword meets epsilon={epsilon:g}; best singleton error {best_singleton:.6g}",
            offending_error=best_singleton,
        )
    logger.debug("channel code with %d codewords, max error %.6g", len(code), errors.max())
    return ChannelCode(
        n=n,
        codewords=tuple(code),
        decoder=decoder,
        per_codeword_error=errors,
        epsilon=epsilon,
        delta=delta,
    )


def _support_count(e: CqEnsemble, n: int) -> int:
    return int(np.count_nonzero(e.probs > 0.0)) ** n


def _assemble(
    e: CqEnsemble,
    n: int,
    codes: Sequence[ChannelCode],
    *,
    epsilon: float,
    delta: float,
    typical_prob: float,
    uncovered_prob: float,
    stop_reason: str,
    drop_reserved_index: bool,
) -> CqswCode:
    encoder: dict[Codeword, int] = {}
    for idx, c in enumerate(codes, start=1):
        for word in c.codewords:
            if word in encoder:
                raise ValidationFailure(f"codes {encoder[word]} and {idx} share codeword {word}")
            encoder[word] = idx
    covered_positive = sum(1 for word in encoder if sequence_state(e, word).prob > 0.0)
    exact = covered_positive == _support_count(e, n)
    if exact:
        uncovered_prob = 0.0
    reserved = not (drop_reserved_index and exact and codes)
    if drop_reserved_index and not reserved:
        logger.info("cover is exact; reserved index dropped")
    elif drop_reserved_index:
        logger.warning("reserved index kept: cover leaves probability %.6g uncovered", uncovered_prob)
    return CqswCode(
        n=n,
        codes=tuple(codes),
        M=len(codes) + (1 if reserved else 0),
        delta=delta,
        epsilon=epsilon,
        encoder_index=encoder,
        reserved_index=reserved,
        typical_prob=typical_prob,
        uncovered_prob=uncovered_prob,
        stop_reason=stop_reason,
    )


def greedy_cover(
    e: CqEnsemble,
    n: int,
    epsilon: float,
    delta: float,
    rng_seed: int,
    *,
    eta: float | None = None,
    drop_reserved_index: bool = False,
    settings: Settings | None = None,
) -> CqswCode:
    """Disjoint codes carved out of the typical set until its leftover mass is at most epsilon.

    Code i draws candidates with ``default_rng([rng_seed, i])``.
    """
    settings = settings or get_settings()
    _check_code_params(n, epsilon, delta)
    eta = settings.eta if eta is None else eta
    typical = typical_set(e.probs, n, delta, settings=settings)
    remaining: dict[Codeword, float] = {
        tuple(int(x) for x in row): float(p) for row, p in zip(typical.members, typical.member_probs)
    }
    not_typical = max(0.0, 1.0 - typical.total_prob)
    ctx = _CodebookContext(e, n, delta, settings)

    codes: list[ChannelCode] = []
    stop_reason = "residual-at-most-epsilon"
    while True:
        leftover = math.fsum(remaining.values())
        if leftover <= epsilon:
            break
        if leftover < eta:
            stop_reason = "residual-below-eta"
            break
        try:
            code = build_channel_code(
                e,
                n,
                epsilon,
                delta,
                list(remaining),
                [int(rng_seed), len(codes) + 1],
                eta=eta,
                settings=settings,
                context=ctx,
            )
        except ConstructionFailure as exc:
            partial = _assemble(
                e,
                n,
                codes,
                epsilon=epsilon,
                delta=delta,
                typical_prob=typical.total_prob,
                uncovered_prob=not_typical + leftover,
                stop_reason="constructor-failed",
                drop_reserved_index=False,
            )
            raise CoverIncomplete(
                f"cover stopped after {len(codes)} code(s) with residual {leftover:.6g}: {exc}",
                partial=partial,
                offending_error=exc.offending_error,
            ) from exc
        codes.append(code)
        for word in code.codewords:
            del remaining[word]
        logger.info("code %d: %d codewords, typical mass left %.6g", len(codes), code.size, math.fsum(remaining.values()))

    return _assemble(
        e,
        n,
        codes,
        epsilon=epsilon,
        delta=delta,
        typical_prob=typical.total_prob,
        uncovered_prob=not_typical + math.fsum(remaining.values()),
        stop_reason=stop_reason,
        drop_reserved_index=drop_reserved_index,
    )


def fixed_cover(
    e: CqEnsemble,
    n: int,
    groups: Sequence[Sequence[Sequence[int]]],
    epsilon: float,
    delta: float,
    *,
    drop_reserved_index: bool = False,
    settings: Settings | None = None,
) -> CqswCode:
    settings = settings or get_settings()
    _check_code_params(n, epsilon, delta)
    if not groups:
        raise ValidationFailure("a fixed cover needs at least one group")
    ctx = _CodebookContext(e, n, delta, settings)
    codes: list[ChannelCode] = []
    for idx, group in enumerate(groups, start=1):
        words = list(_as_codewords(group))
        if len(words[0]) != n:
            raise ValidationFailure(f"group {idx} has codewords of length {len(words[0])}, expected {n}")
        decoder, errors = _decode_and_score(ctx, words)
        if errors.max() > epsilon:
            raise ConstructionFailure(
                f"group {idx} violates epsilon={epsilon:g} (max error {errors.max():.6g})",
                offending_error=float(errors.max()),
            )
        codes.append(
            ChannelCode(
                n=n,
                codewords=tuple(words),
                decoder=decoder,
                per_codeword_error=errors,
                epsilon=epsilon,
                delta=delta,
            )
        )
    covered = math.fsum(ctx.state(w).prob for c in codes for w in c.codewords)
    typical_prob = typical_set_probability(e.probs, n, delta)
    return _assemble(
        e,
        n,
        codes,
        epsilon=epsilon,
        delta=delta,
        typical_prob=typical_prob,
        uncovered_prob=max(0.0, 1.0 - covered),
        stop_reason="fixed",
        drop_reserved_index=drop_reserved_index,
    )


def encode(code: CqswCode, xn: Sequence[int]) -> int:
    """Index of the code holding xn, else the reserved index M.

    With the reserved index dropped every positive-probability sequence is
    covered; a zero-probability sequence then has no index and is refused.
    """
    word = tuple(int(x) for x in xn)
    if len(word) != code.n:
        raise ValidationFailure(f"sequence has length {len(word)}, expected n={code.n}")
    index = code.encoder_index.get(word)
    if index is not None:
        return index
    if code.reserved is None:
        raise ValidationFailure(f"sequence {word} is outside an exact cover with no reserved index")
    return code.M


def decoder_for(code: CqswCode, index: int) -> Povm | None:
    """POVM Bob applies on index i; None stands for the trivial measurement on M."""
    if not 1 <= index <= code.M:
        raise ValidationFailure(f"index {index} outside [1, {code.M}]")
    if index > len(code.codes):
        return None
    return code.codes[index - 1].decoder


def decode(code: CqswCode, index: int, outcome: Hashable) -> Codeword | None:
    decoder = decoder_for(code, index)
    if decoder is None or outcome == FAIL_LABEL:
        return None
    if outcome not in decoder.labels:
        raise ValidationFailure(f"outcome {outcome!r} does not belong to code {index}")
    return tuple(outcome)  # type: ignore[arg-type]


def _sequences(e: CqEnsemble, n: int, settings: Settings) -> list[Codeword]:
    total = e.size**n
    if total > settings.max_exact_sequences:
        raise ResourceCapExceeded(
            "exact evaluation over X^n",
            requested=total,
            cap=settings.max_exact_sequences,
            advisory="use the Monte Carlo path (--mode mc)",
        )
    return list(itertools.product(range(e.size), repeat=n))


def exact_code_metrics(code: CqswCode, e: CqEnsemble, *, settings: Settings | None = None) -> CodeMetrics:
    """P_e and Delta summed over every x^n with its Born probabilities.

    Sequences on the reserved index count as errors and leave the state
    untouched.
    """
    settings = settings or get_settings()
    words = _sequences(e, code.n, settings)
    roots = [kraus_roots(c.decoder) for c in code.codes]

    def chunk(span: range) -> list[tuple[float, float, float, float, float]]:
        rows = []
        for pos in span:
            seq = sequence_state(e, words[pos])
            if seq.prob <= 0.0:
                continue
            index = code.encoder_index.get(seq.sequence)
            if index is None:
                rows.append((seq.prob, seq.prob, 0.0, 0.0, seq.prob))
                continue
            c = code.codes[index - 1]
            rho = seq.state.matrix
            j = c.decoder.labels.index(seq.sequence)
            success = float(born_probabilities(rho, c.decoder)[j])
            deficit = min(1.0, max(0.0, 1.0 - success))
            averaged = outcome_averaged_state(rho, c.decoder, roots[index - 1])
            disturbance = trace_distance(averaged, rho)
            rows.append((seq.prob, seq.prob * deficit, seq.prob * disturbance, deficit, 0.0))
        return rows

    parts = map_in_order(chunk, split_range(len(words), settings.workers), settings.workers)
    rows = [row for part in parts for row in part]
    p_e = math.fsum(r[1] for r in rows)
    delta = math.fsum(r[2] for r in rows)
    coded = [r for r in rows if r[4] == 0.0]
    return CodeMetrics(
        P_e=min(1.0, p_e),
        Delta=delta,
        epsilon_hat=max((r[3] for r in coded), default=0.0),
        mean_deficit=math.fsum(r[0] * r[3] for r in coded),
        encoding_error_prob=math.fsum(r[4] for r in rows),
        sequences=len(rows),
    )


def rate_floor(e: CqEnsemble, n: int, p_error: float) -> float:
    """Converse floor H(X) - chi - 1/n - P_e log2|X| on any achievable rate."""
    if not 0.0 <= p_error <= 1.0:
        raise ValidationFailure(f"P_e must lie in [0, 1], got {p_error}")
    return shannon_entropy(e.probs) - holevo_information(e) - 1.0 / n - p_error * math.log2(e.size)


def cover_audit(code: CqswCode, e: CqEnsemble, *, p_error: float | None = None) -> CoverAudit:
    not_typical = max(0.0, 1.0 - code.typical_prob)
    residual_bound = not_typical + code.epsilon

    chi = holevo_information(e)
    upper = cqsw_rate(e) + 2.0 * code.delta
    sizes = tuple(c.size for c in code.codes)
    target = 2.0 ** (code.n * (chi - code.delta))
    total_bound = code.uncovered_prob + code.epsilon
    # without a measured P_e the floor uses its upper bound
    floor = rate_floor(e, code.n, min(1.0, total_bound) if p_error is None else p_error)
    return CoverAudit(
        residual_prob=code.uncovered_prob,
        residual_bound=residual_bound,
        residual_ok=code.uncovered_prob <= residual_bound + ERROR_RECHECK_TOL,
        rate=code.rate,
        rate_upper_target=upper,
        rate_within_upper=code.rate <= upper + ERROR_RECHECK_TOL,
        rate_floor=floor,
        rate_floor_ok=code.rate >= floor - ERROR_RECHECK_TOL,
        code_sizes=sizes,
        size_target=target,
        sizes_meeting_target=sum(1 for s in sizes if s >= target),
        total_error_bound=total_bound,
        total_error_ok=None if p_error is None else p_error <= total_bound + ERROR_RECHECK_TOL,
        p_error_used=p_error,
    )


def check_code_invariants(code: CqswCode, e: CqEnsemble) -> list[str]:
    """Every violated structural invariant, as a readable line; empty when sound."""
    problems: list[str] = []
    seen: dict[Codeword, int] = {}
    for idx, c in enumerate(code.codes, start=1):
        for word in c.codewords:
            if word in seen:
                problems.append(f"codeword {word} in codes {seen[word]} and {idx}")
            seen[word] = idx
            if code.encoder_index.get(word) != idx:
                problems.append(f"encoder maps {word} to {code.encoder_index.get(word)}, expected {idx}")
        total = np.sum(c.decoder.elements, axis=0)
        gap = float(np.max(np.abs(total - np.eye(total.shape[0]))))
        if gap > ERROR_RECHECK_TOL:
            problems.append(f"code {idx} decoder completeness off by {gap:.3e}")
        for j, word in enumerate(c.codewords):
            rho = sequence_state(e, word).state.matrix
            fresh = 1.0 - float(np.real(np.trace(rho @ c.decoder.elements[j])))
            if abs(fresh - float(c.per_codeword_error[j])) > ERROR_RECHECK_TOL:
                problems.append(f"code {idx} codeword {word}: stored error {c.per_codeword_error[j]:.12g} vs {fresh:.12g}")
            if c.per_codeword_error[j] > c.epsilon + ERROR_RECHECK_TOL:
                problems.append(f"code {idx} codeword {word}: error {c.per_codeword_error[j]:.6g} exceeds {c.epsilon:g}")
    if len(set(code.encoder_index)) != len(seen):
        problems.append("encoder index and codes disagree on the covered set")
    expected_m = len(code.codes) + (1 if code.reserved_index else 0)
    if code.M != expected_m:
        problems.append(f"M={code.M}, expected {expected_m}")
    return problems
