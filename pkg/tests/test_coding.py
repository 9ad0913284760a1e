from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from cqsw.core.config import Settings
from cqsw.core.errors import ConstructionFailure, CoverIncomplete, ResourceCapExceeded, ValidationFailure
from cqsw.services.coding import (
    FAIL_LABEL,
    _BoundedCache,
    build_channel_code,
    check_code_invariants,
    cover_audit,
    decode,
    decoder_for,
    encode,
    exact_code_metrics,
    fixed_cover,
    greedy_cover,
    rate_floor,
    srm_decoder,
)
from cqsw.services.ensembles import (
    KETS,
    bb84_ensemble,
    make_ensemble,
    orthogonal_pair_ensemble,
    zero_plus_ensemble,
)
from cqsw.services.linalg import ket_projector
from cqsw.services.typicality import is_typical_sequence


SIN2_PI_8 = math.sin(math.pi / 8) ** 2


def _deterministic_source():
    return make_ensemble(["a", "b"], [1.0, 0.0], [ket_projector(KETS["0"]), ket_projector(KETS["1"])])


def test_single_codeword_error_is_overlap_with_typical_direction() -> None:
    e = zero_plus_ensemble()
    code = fixed_cover(e, 1, [[(0,)]], 0.2, 0.5)
    assert code.codes[0].per_codeword_error[0] == pytest.approx(SIN2_PI_8, abs=1e-10)
    assert code.M == 2
    assert code.reserved == 2

    metrics = exact_code_metrics(code, e)
    assert metrics.P_e == pytest.approx(0.5 * SIN2_PI_8 + 0.5, abs=1e-10)
    assert metrics.encoding_error_prob == pytest.approx(0.5)
    assert metrics.epsilon_hat == pytest.approx(SIN2_PI_8, abs=1e-10)


def test_identical_states_cannot_be_told_apart() -> None:
    zero = ket_projector(KETS["0"])
    e = make_ensemble(["a", "b"], [0.5, 0.5], [zero, zero])
    code = fixed_cover(e, 1, [[(0,), (1,)]], 0.6, 0.5)
    assert code.codes[0].per_codeword_error.tolist() == pytest.approx([0.5, 0.5], abs=1e-10)
    decoder = code.codes[0].decoder
    assert decoder.labels[-1] == FAIL_LABEL
    assert np.allclose(decoder.elements[-1], ket_projector(KETS["1"]), atol=1e-10)


def test_fixed_cover_rejects_group_over_epsilon() -> None:
    with pytest.raises(ConstructionFailure) as info:
        fixed_cover(zero_plus_ensemble(), 1, [[(0,)]], 0.1, 0.5)
    assert info.value.offending_error == pytest.approx(SIN2_PI_8, abs=1e-10)


def test_srm_decoder_is_complete() -> None:
    e = zero_plus_ensemble()
    decoder = srm_decoder(e, [(0, 0), (1, 1), (0, 1)], 0.5)
    assert len(decoder) == 4
    assert np.allclose(np.sum(decoder.elements, axis=0), np.eye(4), atol=1e-8)
    with pytest.raises(ValidationFailure, match="distinct"):
        srm_decoder(e, [(0, 0), (0, 0)], 0.5)


def test_orthogonal_pair_cover_is_exact() -> None:
    e = orthogonal_pair_ensemble()
    code = greedy_cover(e, 3, 0.2, 0.5, rng_seed=1)
    assert len(code.codes) == 1
    assert code.codes[0].size == 8
    assert code.M == 2
    assert code.uncovered_prob == 0.0
    assert code.stop_reason == "residual-at-most-epsilon"
    metrics = exact_code_metrics(code, e)
    assert metrics.P_e == pytest.approx(0.0, abs=1e-10)
    assert metrics.Delta == pytest.approx(0.0, abs=1e-10)
    assert check_code_invariants(code, e) == []

    dropped = greedy_cover(e, 3, 0.2, 0.5, rng_seed=1, drop_reserved_index=True)
    assert dropped.M == 1
    assert dropped.reserved is None
    assert dropped.rate == 0.0
    for word in itertools.product(range(2), repeat=3):
        assert encode(dropped, word) == 1


def test_orthogonal_pair_reserved_index_catches_atypical_sequences() -> None:
    e = orthogonal_pair_ensemble()
    code = greedy_cover(e, 4, 0.2, 0.3, rng_seed=3)
    assert code.codes[0].size == 14
    assert code.typical_prob == pytest.approx(0.875)
    assert code.uncovered_prob == pytest.approx(0.125)
    assert encode(code, (0, 0, 0, 0)) == code.M == 2
    assert encode(code, (0, 1, 0, 1)) == 1
    assert decoder_for(code, 2) is None

    metrics = exact_code_metrics(code, e)
    assert metrics.P_e == pytest.approx(0.125, abs=1e-10)
    assert metrics.encoding_error_prob == pytest.approx(0.125)

    audit = cover_audit(code, e, p_error=metrics.P_e)
    assert audit.residual_ok
    assert audit.rate == pytest.approx(0.25)
    assert audit.rate_within_upper
    assert audit.rate_floor_ok
    assert audit.sizes_meeting_target == 1
    assert audit.total_error_ok is True

    # the reserved index is kept because the cover is not exact
    kept = greedy_cover(e, 4, 0.2, 0.3, rng_seed=3, drop_reserved_index=True)
    assert kept.M == 2


def test_deterministic_source_needs_one_codeword() -> None:
    e = _deterministic_source()
    code = greedy_cover(e, 3, 0.2, 0.5, rng_seed=0)
    assert code.codes[0].codewords == ((0, 0, 0),)
    assert code.M == 2
    exact = greedy_cover(e, 3, 0.2, 0.5, rng_seed=0, drop_reserved_index=True)
    assert exact.M == 1
    with pytest.raises(ValidationFailure, match="no reserved index"):
        encode(exact, (1, 1, 1))


def test_zero_plus_cover_properties() -> None:
    e = zero_plus_ensemble()
    code = greedy_cover(e, 4, 0.2, 0.5, rng_seed=7)
    assert check_code_invariants(code, e) == []
    assert code.uncovered_prob <= 0.2 + 1e-12
    for c in code.codes:
        assert c.max_error <= 0.2
        for word in c.codewords:
            assert is_typical_sequence(word, e.probs, 0.5)
            assert encode(code, word) == code.codes.index(c) + 1
            assert decode(code, encode(code, word), word) == word
    metrics = exact_code_metrics(code, e)
    assert metrics.P_e <= code.uncovered_prob + 0.2 + 1e-9
    assert metrics.epsilon_hat <= 0.2 + 1e-9
    assert cover_audit(code, e).residual_ok


def test_greedy_cover_is_reproducible_across_workers() -> None:
    e = zero_plus_ensemble()
    serial = greedy_cover(e, 4, 0.2, 0.5, rng_seed=11, settings=Settings(workers=1))
    threaded = greedy_cover(e, 4, 0.2, 0.5, rng_seed=11, settings=Settings(workers=2))
    assert [c.codewords for c in serial.codes] == [c.codewords for c in threaded.codes]
    assert serial.M == threaded.M


def test_cover_incomplete_carries_partial_code() -> None:
    with pytest.raises(CoverIncomplete) as info:
        greedy_cover(zero_plus_ensemble(), 1, 0.1, 0.5, rng_seed=5)
    partial = info.value.partial
    assert partial.codes == ()
    assert partial.stop_reason == "constructor-failed"
    assert info.value.offending_error == pytest.approx(SIN2_PI_8, abs=1e-10)


def test_build_channel_code_validates_candidates() -> None:
    e = _deterministic_source()
    with pytest.raises(ValidationFailure, match="eta"):
        build_channel_code(e, 3, 0.2, 0.5, [(1, 1, 1)], 0)
    with pytest.raises(ValidationFailure, match="length"):
        build_channel_code(e, 3, 0.2, 0.5, [(0, 0)], 0)
    with pytest.raises(ValidationFailure, match="epsilon"):
        build_channel_code(e, 3, 1.5, 0.5, [(0, 0, 0)], 0)


def test_decode_rules() -> None:
    e = orthogonal_pair_ensemble()
    code = greedy_cover(e, 3, 0.2, 0.5, rng_seed=1)
    assert decode(code, 1, (0, 1, 0)) == (0, 1, 0)
    assert decode(code, 1, FAIL_LABEL) is None
    assert decode(code, 2, (0, 1, 0)) is None
    with pytest.raises(ValidationFailure):
        decoder_for(code, 0)
    with pytest.raises(ValidationFailure):
        encode(code, (0, 1))


def test_exact_metrics_respect_sequence_cap() -> None:
    e = orthogonal_pair_ensemble()
    code = greedy_cover(e, 3, 0.2, 0.5, rng_seed=1)
    with pytest.raises(ResourceCapExceeded, match="--mode mc"):
        exact_code_metrics(code, e, settings=Settings(max_exact_sequences=4))


def test_rate_floor() -> None:
    assert rate_floor(bb84_ensemble(), 1, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert rate_floor(orthogonal_pair_ensemble(), 2, 0.0) == pytest.approx(-0.5)
    with pytest.raises(ValidationFailure):
        rate_floor(bb84_ensemble(), 1, 1.5)


def test_bounded_cache_evicts_least_recently_used() -> None:
    block = np.zeros((4, 4), dtype=np.complex128)
    cache: _BoundedCache[np.ndarray] = _BoundedCache(2 * block.nbytes, lambda m: m.nbytes)
    built: list[tuple[int, ...]] = []

    def make(key: tuple[int, ...]):
        def build() -> np.ndarray:
            built.append(key)
            return block.copy()

        return build

    for key in [(0,), (1,), (0,), (2,), (0,), (1,)]:
        cache.get_or_build(key, make(key))
    assert built == [(0,), (1,), (2,), (1,)]
    assert len(cache) == 2
    assert cache.nbytes == 2 * block.nbytes

    tiny: _BoundedCache[np.ndarray] = _BoundedCache(0, lambda m: m.nbytes)
    tiny.get_or_build((0,), make((0,)))
    tiny.get_or_build((1,), make((1,)))
    assert len(tiny) == 1


def test_cover_does_not_depend_on_cache_budget() -> None:
    e = zero_plus_ensemble()
    cached = greedy_cover(e, 4, 0.2, 0.5, rng_seed=7)
    uncached = greedy_cover(e, 4, 0.2, 0.5, rng_seed=7, settings=Settings(cache_bytes=0))
    assert [c.codewords for c in cached.codes] == [c.codewords for c in uncached.codes]
    for a, b in zip(cached.codes, uncached.codes):
        assert np.allclose(a.per_codeword_error, b.per_codeword_error, atol=1e-12)
