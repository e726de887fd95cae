import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from d2dstream.rlc import (
    EXP,
    INV,
    LOG,
    MUL,
    BlockMismatch,
    CodedChunk,
    DecoderState,
    FieldElement,
    batch_rank,
    decode_block,
    encode_chunk,
    full_rank_probability,
    full_rank_trials,
    gf_matmul,
    round_trip,
    split_block,
)


def slow_mul(a, b):
    # carry-less product reduced by the AES polynomial
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        if a & 0x100:
            a ^= 0x11B
        b >>= 1
    return r


def test_mul_table_matches_shift_and_add():
    for a in range(256):
        for b in range(0, 256, 7):
            assert MUL[a, b] == slow_mul(a, b)


def test_field_axioms():
    a = np.arange(256)
    assert np.array_equal(MUL, MUL.T)
    assert np.all(MUL[1] == a) and np.all(MUL[0] == 0)
    assert np.all(MUL[a[1:], INV[1:]] == 1)
    assert len(set(EXP[:255].tolist())) == 255
    assert LOG[3] == 1
    rng = np.random.default_rng(0)
    x, y, z = rng.integers(0, 256, size=(3, 5000))
    assert np.array_equal(MUL[MUL[x, y], z], MUL[x, MUL[y, z]])
    assert np.array_equal(MUL[x, y ^ z], MUL[x, y] ^ MUL[x, z])


def test_field_element():
    a, b = FieldElement(0x57), FieldElement(0x83)
    assert (a * b).value == 0xC1
    assert (a + b).value == 0x57 ^ 0x83
    assert (a / b) * b == a
    assert a ** 255 == FieldElement(1)
    with pytest.raises(ZeroDivisionError):
        FieldElement(0).inverse()
    with pytest.raises(ValueError):
        FieldElement(256)


def test_encode_examples():
    rng = np.random.default_rng(1)
    src = rng.integers(0, 256, size=(4, 32), dtype=np.uint8)
    for j in range(4):
        e = np.zeros(4, dtype=np.uint8)
        e[j] = 1
        assert np.array_equal(encode_chunk(src, e).payload, src[j])
    assert not encode_chunk(src, np.zeros(4, dtype=np.uint8)).payload.any()
    with pytest.raises(ValueError):
        encode_chunk([b"abc", b"de"], [1, 1])
    with pytest.raises(ValueError):
        encode_chunk(src, [1, 2])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_encode_linearity(N, seed):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, 256, size=(N, 16), dtype=np.uint8)
    c1, c2 = rng.integers(0, 256, size=(2, N), dtype=np.uint8)
    lhs = encode_chunk(src, c1).payload ^ encode_chunk(src, c2).payload
    assert np.array_equal(lhs, encode_chunk(src, c1 ^ c2).payload)


def test_decoder_rank_behaviour():
    N = 5
    rng = np.random.default_rng(2)
    src = rng.integers(0, 256, size=(N, 20), dtype=np.uint8)
    dec = DecoderState(N)
    first = encode_chunk(src, rng=rng)
    assert dec.absorb(first) and dec.rank == 1
    assert not dec.absorb(first) and dec.rank == 1
    for j in range(N - 1):
        e = np.zeros(N, dtype=np.uint8)
        e[j] = 1
        dec.absorb(encode_chunk(src, e))
    if dec.rank == N - 1:
        assert decode_block(dec) is None
    e = np.zeros(N, dtype=np.uint8)
    e[N - 1] = 1
    dec.absorb(encode_chunk(src, e))
    assert dec.ready
    assert np.array_equal(decode_block(dec), src)


def test_not_ready_below_full_rank():
    N = 4
    src = np.arange(N * 8, dtype=np.uint8).reshape(N, 8)
    dec = DecoderState(N)
    for j in range(N - 1):
        e = np.zeros(N, dtype=np.uint8)
        e[j] = 1
        dec.absorb(encode_chunk(src, e))
    assert dec.rank == N - 1 and decode_block(dec) is None


def test_block_mismatch():
    dec = DecoderState(3, block_id=7)
    ch = encode_chunk(np.ones((3, 4), dtype=np.uint8), [1, 2, 3], block_id=8)
    with pytest.raises(BlockMismatch):
        dec.absorb(ch)
    with pytest.raises(BlockMismatch):
        DecoderState(4, block_id=8).absorb(ch)


def test_wire_format():
    ch = encode_chunk(np.arange(6, dtype=np.uint8).reshape(2, 3), [1, 2], block_id=0x01020304)
    raw = ch.to_bytes()
    assert raw[:4] == b"\x01\x02\x03\x04"
    assert raw[4:6] == b"\x01\x02"
    assert len(raw) == 4 + 2 + 3
    back = CodedChunk.from_bytes(raw, 2)
    assert back.block_id == ch.block_id
    assert np.array_equal(back.coefficients, ch.coefficients)
    assert np.array_equal(back.payload, ch.payload)
    with pytest.raises(ValueError):
        CodedChunk.from_bytes(raw[:5], 2)


def test_batch_rank_matches_decoder():
    rng = np.random.default_rng(3)
    mats = rng.integers(0, 4, size=(300, 6, 5), dtype=np.uint8)
    ranks = batch_rank(mats)
    for m, r in zip(mats, ranks):
        dec = DecoderState(5)
        for row in m:
            dec.absorb(CodedChunk(0, row, np.zeros(1, dtype=np.uint8)))
        assert dec.rank == r


def test_gf_matmul_identity():
    rng = np.random.default_rng(4)
    A = rng.integers(0, 256, size=(5, 5), dtype=np.uint8)
    assert np.array_equal(gf_matmul(np.eye(5, dtype=np.uint8), A), A)


def test_full_rank_rate_small_sample():
    p = full_rank_probability(10)
    assert p == pytest.approx(0.99608, abs=1e-5)
    n = 20_000
    rate = full_rank_trials(10, n, 5) / n
    assert abs(rate - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_round_trips():
    rng = np.random.default_rng(6)
    for _ in range(50):
        data = rng.integers(0, 256, size=int(rng.integers(1, 3000)), dtype=np.uint8).tobytes()
        assert round_trip(data, 10, rng, extra=10) == data
    assert split_block(b"abc", 2).shape == (2, 2)
    with pytest.raises(ValueError):
        split_block(b"abcdef", 2, chunk_bytes=2)
