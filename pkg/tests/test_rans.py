import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from splitwire.errors import CorruptPayload, SplitwireError
from splitwire.rans import (
    RANS_L,
    TABLE_LOG,
    empirical_entropy_bytes,
    normalize_freqs,
    rans_decode,
    rans_encode,
    stream_from_bytes,
    table_log_for,
)

from oracles import entropy_bytes


def roundtrip(sym, bits):
    s = rans_encode(sym, bits)
    back = rans_decode(stream_from_bytes(s.to_bytes()))
    assert np.array_equal(back, np.asarray(sym))
    return s


def test_constants():
    assert TABLE_LOG == 12 and RANS_L == 1 << 23


def test_constant_stream():
    s = roundtrip([0] * 8, 4)
    assert s.symbol_count == 8
    big = roundtrip(np.zeros(4096, int), 4)
    # 4096 nibbles = 2048 raw bytes; a one-symbol stream costs only the state flush
    assert len(big.payload) < 2048 and len(big.payload) <= 8


def test_empty_stream():
    s = rans_encode([], 3)
    assert s.symbol_count == 0 and s.payload == b""
    assert rans_decode(s).size == 0


def test_uniform_3bit_near_entropy():
    rng = np.random.default_rng(0)
    sym = rng.integers(0, 8, 10**6)
    s = roundtrip(sym, 3)
    bound = entropy_bytes(sym)
    assert abs(len(s.payload) - bound) <= 0.02 * bound
    assert empirical_entropy_bytes(sym) == pytest.approx(bound, rel=1e-12)


def test_freq_table_invariants():
    rng = np.random.default_rng(1)
    for bits in range(1, 9):
        sym = rng.geometric(0.3, 5000) % (1 << bits)
        s = rans_encode(sym, bits)
        assert int(s.freq_table.astype(np.int64).sum()) == 1 << s.table_log
        used = np.bincount(sym, minlength=1 << bits) > 0
        assert np.all(s.freq_table[used] >= 1)


def test_normalize_keeps_rare_symbols():
    counts = np.zeros(16, np.int64)
    counts[0] = 10**9
    counts[1:] = 1
    f = normalize_freqs(counts, 12)
    assert f.sum() == 4096 and f.min() >= 1


def test_table_log_widens_for_large_alphabets():
    assert table_log_for(8) == 12 and table_log_for(15) == 15
    sym = np.arange(1 << 13)
    roundtrip(sym, 13)


def test_layout():
    s = rans_encode([1, 2, 3], 2)
    buf = s.to_bytes()
    sb, tl, cnt = struct.unpack_from("<BBI", buf)
    assert (sb, tl, cnt) == (2, 12, 3)
    freqs = np.frombuffer(buf, "<u2", count=4, offset=6)
    assert freqs.tolist() == s.freq_table.tolist()
    (plen,) = struct.unpack_from("<I", buf, 6 + 8)
    assert plen == len(s.payload) and len(buf) == 6 + 8 + 4 + plen == s.nbytes


def test_symbol_out_of_alphabet():
    with pytest.raises(SplitwireError):
        rans_encode([0, 4], 2)
    with pytest.raises(SplitwireError):
        rans_encode([-1], 2)
    with pytest.raises(SplitwireError):
        rans_encode([0], 0)


def test_truncated_payload_detected():
    rng = np.random.default_rng(2)
    buf = rans_encode(rng.integers(0, 16, 1000), 4).to_bytes()
    for cut in (1, 5, len(buf) // 2):
        with pytest.raises(CorruptPayload):
            stream_from_bytes(buf[:-cut])


def test_truncated_payload_with_fixed_header():
    rng = np.random.default_rng(2)
    s = rans_encode(rng.integers(0, 16, 1000), 4)
    bad = type(s)(s.symbol_bits, s.table_log, s.symbol_count, s.freq_table, s.payload[:-3])
    with pytest.raises(CorruptPayload):
        rans_decode(bad)


def test_tampered_payload_detected():
    rng = np.random.default_rng(3)
    s = rans_encode(rng.integers(0, 16, 1000), 4)
    p = bytearray(s.payload)
    p[len(p) // 2] ^= 0x5A
    bad = type(s)(s.symbol_bits, s.table_log, s.symbol_count, s.freq_table, bytes(p))
    with pytest.raises(CorruptPayload):
        rans_decode(bad)


def test_bad_freq_table_detected():
    s = rans_encode([0, 1, 1], 1)
    bad = type(s)(1, 12, 3, np.array([1, 1], np.uint16), s.payload)
    with pytest.raises(CorruptPayload):
        rans_decode(bad)


def test_deterministic():
    rng = np.random.default_rng(4)
    sym = rng.integers(0, 32, 20000)
    assert rans_encode(sym, 5).to_bytes() == rans_encode(sym.copy(), 5).to_bytes()


def test_skewed_compresses():
    rng = np.random.default_rng(5)
    sym = np.where(rng.random(10**5) < 0.9, 0, rng.integers(1, 16, 10**5))
    s = roundtrip(sym, 4)
    assert len(s.payload) < 0.7 * (10**5 * 4 / 8)


@given(st.integers(1, 8).flatmap(lambda b: st.tuples(st.just(b), st.lists(st.integers(0, (1 << b) - 1), max_size=3000))))
def test_roundtrip_property(case):
    bits, sym = case
    roundtrip(np.array(sym, dtype=np.int64), bits)
