import numpy as np
import pytest

from ringex.rng import (
    BLOCK_WORDS,
    bitgen_state,
    composite_index,
    raw_block,
    restore_stream,
    stream,
)


def test_stream_deterministic():
    a = stream(42, 3).integers(0, 2**63, 10)
    b = stream(42, 3).integers(0, 2**63, 10)
    assert np.array_equal(a, b)


def test_streams_differ_by_index_and_seed():
    base = stream(42, 0).integers(0, 2**63, 8)
    assert not np.array_equal(base, stream(42, 1).integers(0, 2**63, 8))
    assert not np.array_equal(base, stream(43, 0).integers(0, 2**63, 8))


def test_composite_index_packs_disjointly():
    assert composite_index(0, 0) == 0
    assert composite_index(1, 0) == 1 << 20
    assert composite_index(2, 5) == (2 << 20) | 5
    with pytest.raises(ValueError):
        composite_index(0, 1 << 20)


def test_raw_block_is_the_generator_sequence():
    g1, g2 = stream(7), stream(7)
    a = raw_block(g1, 1000)
    b = np.concatenate([raw_block(g2, 400), raw_block(g2, 600)])
    assert np.array_equal(a, b)
    assert a.dtype == np.uint64


def test_state_round_trip_mid_buffer():
    g = stream(9, 4)
    g.integers(0, 2**63, 37)  # leave the Philox buffer partially consumed
    st = bitgen_state(g)
    # JSON-able: plain ints only
    import json

    restored = restore_stream(json.loads(json.dumps(st)))
    assert np.array_equal(
        g.integers(0, 2**63, 100), restored.integers(0, 2**63, 100)
    )


def test_restore_rejects_other_generators():
    st = bitgen_state(stream(0))
    st["bit_generator"] = "PCG64"
    with pytest.raises(ValueError):
        restore_stream(st)


def test_block_words_sane():
    assert BLOCK_WORDS >= 1 << 16
    assert BLOCK_WORDS & (BLOCK_WORDS - 1) == 0
