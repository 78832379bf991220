import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from splitwire.errors import CorruptPayload, SplitwireError
from splitwire.payload import (
    HEADER_BYTES,
    CompressedPayload,
    PayloadMeta,
    baseline_size_bytes,
    compress,
    decompress,
    load_payload,
    payload_size_bytes,
    prefix_sizes,
    row_scales,
    save_payload,
)
from splitwire.tabq import TabqConfig
from splitwire.tensor import STATS_PRESETS, ActivationTensor, OutlierStats, make_tensor, synth_activations

CFG = TabqConfig()


def check_roundtrip(t, tau, cfg=CFG):
    p = compress(t, tau, cfg)
    buf = p.to_bytes()
    assert len(buf) == p.size() == payload_size_bytes(p)
    back = decompress(CompressedPayload.from_bytes(buf))
    assert back.shape == t.shape
    x = t.data
    above = (np.abs(x) >= tau) & (x != 0)
    assert np.array_equal(back.data[above].view(np.uint32), x[above].view(np.uint32))
    err = np.abs(back.data.astype(np.float64) - x.astype(np.float64))
    scales = row_scales(p)
    assert np.all(np.where(above, 0, err) <= scales[:, None])
    return p, back


def test_header_layout():
    t = make_tensor(2, 6, np.arange(12) - 6.0)
    p = compress(t, 5.0, CFG, PayloadMeta(layer=7, heads=2, head_dim=3, is_kv=True))
    buf = p.to_bytes()
    assert HEADER_BYTES == 24
    magic, ver, flags, layer, rows, heads, hd, tau, cols = struct.unpack_from("<4sBBHIHHfI", buf)
    assert (magic, ver, flags, layer, rows, heads, hd, tau, cols) == (b"SWP1", 1, 1, 7, 2, 2, 3, 5.0, 6)
    (nnz,) = struct.unpack_from("<I", buf, 24)
    assert nnz == 3  # -6, -5 and 5
    q = CompressedPayload.from_bytes(buf)
    assert q.meta == PayloadMeta(7, 2, 3, True)


def test_meta_mismatch():
    t = make_tensor(1, 6, np.zeros(6))
    with pytest.raises(SplitwireError):
        compress(t, 1, CFG, PayloadMeta(heads=4, head_dim=2))


def test_all_zero_tensor():
    t = make_tensor(4, 16, np.zeros(64))
    p, back = check_roundtrip(t, 5)
    assert p.above.nnz == 0
    assert not back.data.any()
    # header + (nnz + row_ptr) + per-row records only
    assert p.size() == HEADER_BYTES + 4 + 4 * 5 + sum(r.nbytes for r in p.records)


def test_single_outlier_exact():
    rng = np.random.default_rng(0)
    x = rng.laplace(0, 2, (8, 64)).clip(-50, 50)
    x[3, 17] = 150.0
    t = make_tensor(8, 64, x)
    p, back = check_roundtrip(t, 100)
    assert p.above.nnz == 1
    assert back.data[3, 17] == np.float32(150.0)


def test_tau_zero_is_lossless():
    t = synth_activations(16, 128, OutlierStats(5, 0.01, 1), 4)
    p, back = check_roundtrip(t, 0)
    assert back == t


def test_signed_zero_survives():
    t = make_tensor(1, 3, [-0.0, 0.0, 1.0])
    back = decompress(compress(t, 0, CFG))
    assert back == t


def test_tampered_stream_byte():
    rng = np.random.default_rng(1)
    t = make_tensor(4, 256, rng.laplace(0, 1, 1024).clip(-4, 4))
    p = compress(t, 5, CFG)
    buf = bytearray(p.to_bytes())
    r0 = p.records[0]
    # first row: record head (9 B) + sign bitmap, then stream head (6 B) + freq table + u32 length
    off = HEADER_BYTES + 4 + 4 * (t.rows + 1) + 8 * p.above.nnz
    off += 9 + len(r0.sign_bits) + 6 + 2 * r0.stream.freq_table.size + 4
    buf[off + len(r0.stream.payload) // 2] ^= 0xFF
    with pytest.raises(CorruptPayload):
        decompress(bytes(buf))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b[:10],
        lambda b: b[:-1],
        lambda b: b + b"\0",
        lambda b: b"SWPX" + b[4:],
        lambda b: b[:4] + b"\x02" + b[5:],
    ],
)
def test_corrupt_payloads(mutate):
    t = synth_activations(4, 32, OutlierStats(2, 0.05, 1), 2)
    buf = compress(t, 2, CFG).to_bytes()
    with pytest.raises(CorruptPayload):
        decompress(mutate(buf))


def test_save_load(tmp_path):
    t = synth_activations(3, 40, OutlierStats(2, 0.05, 1), 3)
    p = compress(t, 2, CFG)
    save_payload(tmp_path / "p.swp", p)
    q = load_payload(tmp_path / "p.swp")
    assert q.to_bytes() == p.to_bytes()


def test_baseline_size():
    assert baseline_size_bytes(16, 5120) == 16 * 5120 * 4 + 24


def test_prefix_sizes_match_recompression():
    t = synth_activations(40, 256, OutlierStats(4, 0.01, 1), 5)
    p = compress(t, 4, CFG)
    sizes = prefix_sizes(p)
    for r in (1, 2, 7, 20, 40):
        assert sizes[r] == compress(t.head(r), 4, CFG).size()


def test_fig4_tensor_properties():
    t = synth_activations(64, 5120, STATS_PRESETS["llama2-13b-fig4"], 0)
    share = {}
    for tau in (1, 5, 10):
        sizes = []
        for qmax in (2, 4, 8):
            p = compress(t, tau, TabqConfig(q_max_bits=qmax))
            sizes.append(p.size())
            assert p.size() < baseline_size_bytes(64, 5120)
        assert sizes[0] <= sizes[1] <= sizes[2]
        p = compress(t, tau, CFG)
        share[tau] = p.above_bytes / p.size()
    assert share[1] > 10 * share[5] and share[5] >= share[10]


def test_size_grows_with_w():
    t = synth_activations(128, 1024, STATS_PRESETS["llama2-13b-fig4"], 1)
    sizes = prefix_sizes(compress(t, 5, CFG))
    assert np.all(np.diff(sizes) > 0)


shapes = st.tuples(st.integers(1, 12), st.integers(1, 48))


@given(
    shapes.flatmap(lambda s: arrays(np.float32, s, elements=st.floats(-300, 300, width=32))),
    st.sampled_from([0.0, 1.0, 5.0, 10.0]),
    st.integers(2, 9),
    st.sampled_from([0.0, 0.2, 1.0]),
)
def test_roundtrip_property(arr, tau, qmax, delta):
    check_roundtrip(ActivationTensor(arr), tau, TabqConfig(q_max_bits=qmax, delta=delta))
