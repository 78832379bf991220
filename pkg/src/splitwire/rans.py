"""Static-model rANS coder: 32-bit state, byte-wise renormalization.

The frequency table is built from the symbols being coded (two-pass) and
serialized alongside the payload, so every stream decodes on its own.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import CorruptPayload, SplitwireError

TABLE_LOG = 12
MAX_SYMBOL_BITS = 15
RANS_L = 1 << 23

_HEAD = struct.Struct("<BBI")
_U32 = struct.Struct("<I")


@dataclass(frozen=True, eq=False)
class RansStream:
    symbol_bits: int
    table_log: int
    symbol_count: int
    freq_table: np.ndarray
    payload: bytes

    @property
    def nbytes(self) -> int:
        return _HEAD.size + 2 * self.freq_table.size + 4 + len(self.payload)

    def to_bytes(self) -> bytes:
        return b"".join(
            (
                _HEAD.pack(self.symbol_bits, self.table_log, self.symbol_count),
                self.freq_table.astype("<u2").tobytes(),
                _U32.pack(len(self.payload)),
                self.payload,
            )
        )

    def __eq__(self, other):
        if not isinstance(other, RansStream):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()


def table_log_for(symbol_bits: int) -> int:
    # alphabets wider than 2**12 need a finer table to give every symbol a slot
    return max(TABLE_LOG, symbol_bits)


def normalize_freqs(counts: np.ndarray, table_log: int) -> np.ndarray:
    """Scale symbol counts to sum to ``2**table_log`` keeping every used symbol >= 1."""
    total = 1 << table_log
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    freq = np.zeros(counts.size, dtype=np.int64)
    if n == 0:
        freq[0] = total
        return freq
    used = counts > 0
    freq[used] = np.maximum(1, (counts[used] * total) // n)
    diff = total - int(freq.sum())
    if diff > 0:
        # largest-remainder top-up
        rem = counts * total - freq * n
        order = np.lexsort((np.arange(counts.size), -rem))
        order = order[used[order]]
        k = 0
        while diff > 0:
            freq[order[k % order.size]] += 1
            diff -= 1
            k += 1
    elif diff < 0:
        # shave from the largest entries, never below 1
        order = np.lexsort((np.arange(counts.size), -freq))
        for s in order:
            if diff == 0:
                break
            take = min(int(freq[s]) - 1, -diff)
            freq[s] -= take
            diff += take
    return freq


@njit(cache=True)
def _encode_kernel(symbols, freq, cum, scale_bits):
    n = symbols.size
    buf = np.empty(2 * n + 8, dtype=np.uint8)
    pos = buf.size
    x = np.int64(RANS_L)
    for i in range(n - 1, -1, -1):
        s = symbols[i]
        f = freq[s]
        x_max = ((RANS_L >> scale_bits) << 8) * f
        while x >= x_max:
            pos -= 1
            buf[pos] = x & 0xFF
            x >>= 8
        x = ((x // f) << scale_bits) + (x % f) + cum[s]
    for k in range(3, -1, -1):
        pos -= 1
        buf[pos] = (x >> (8 * k)) & 0xFF
    return buf[pos:].copy()


@njit(cache=True)
def _decode_kernel(payload, count, freq, cum, slot_sym, scale_bits):
    """Returns (symbols, status); status 0 ok, 1 truncated, 2 bad final state, 3 trailing bytes."""
    out = np.empty(count, dtype=np.int64)
    size = payload.size
    if size < 4:
        return out, 1
    x = np.int64(0)
    for k in range(4):
        x |= np.int64(payload[k]) << (8 * k)
    pos = 4
    mask = (1 << scale_bits) - 1
    for i in range(count):
        slot = x & mask
        s = slot_sym[slot]
        out[i] = s
        x = freq[s] * (x >> scale_bits) + slot - cum[s]
        while x < RANS_L:
            if pos >= size:
                return out, 1
            x = (x << 8) | np.int64(payload[pos])
            pos += 1
    if x != RANS_L:
        return out, 2
    if pos != size:
        return out, 3
    return out, 0


def rans_encode(symbols, symbol_bits: int) -> RansStream:
    """Losslessly code integer symbols in ``[0, 2**symbol_bits)``."""
    if not 1 <= symbol_bits <= MAX_SYMBOL_BITS:
        raise SplitwireError(f"symbol_bits must lie in [1, {MAX_SYMBOL_BITS}], got {symbol_bits}")
    sym = np.asarray(symbols, dtype=np.int64).ravel()
    alphabet = 1 << symbol_bits
    if sym.size and (sym.min() < 0 or sym.max() >= alphabet):
        raise SplitwireError(f"symbol outside the {symbol_bits}-bit alphabet")
    table_log = table_log_for(symbol_bits)
    freq = normalize_freqs(np.bincount(sym, minlength=alphabet), table_log)
    if sym.size == 0:
        payload = b""
    else:
        cum = np.concatenate(([0], np.cumsum(freq)[:-1])).astype(np.int64)
        payload = _encode_kernel(sym, freq, cum, table_log).tobytes()
    return RansStream(
        symbol_bits=symbol_bits,
        table_log=table_log,
        symbol_count=int(sym.size),
        freq_table=freq.astype(np.uint16),
        payload=payload,
    )


def rans_decode(stream: RansStream) -> np.ndarray:
    freq = stream.freq_table.astype(np.int64)
    if freq.size != 1 << stream.symbol_bits:
        raise CorruptPayload("frequency table size does not match symbol_bits")
    if int(freq.sum()) != 1 << stream.table_log or stream.table_log > 16:
        raise CorruptPayload("frequency table does not sum to 2**table_log")
    if stream.symbol_count == 0:
        if stream.payload:
            raise CorruptPayload("empty stream carries payload bytes")
        return np.zeros(0, dtype=np.int64)
    cum = np.concatenate(([0], np.cumsum(freq)[:-1])).astype(np.int64)
    slot_sym = np.repeat(np.arange(freq.size, dtype=np.int64), freq)
    data = np.frombuffer(stream.payload, dtype=np.uint8)
    out, status = _decode_kernel(data, stream.symbol_count, freq, cum, slot_sym, stream.table_log)
    if status == 1:
        raise CorruptPayload("rANS payload truncated")
    if status == 2:
        raise CorruptPayload("rANS final state mismatch (corrupt payload)")
    if status == 3:
        raise CorruptPayload("rANS payload has trailing bytes")
    return out


def read_stream(buf, offset: int = 0) -> tuple[RansStream, int]:
    """Parse a serialized stream at ``offset``; returns the stream and the next offset."""
    if len(buf) < offset + _HEAD.size:
        raise CorruptPayload("truncated rANS stream header")
    symbol_bits, table_log, count = _HEAD.unpack_from(buf, offset)
    if not 1 <= symbol_bits <= MAX_SYMBOL_BITS:
        raise CorruptPayload(f"bad symbol_bits {symbol_bits}")
    offset += _HEAD.size
    nfreq = 1 << symbol_bits
    if len(buf) < offset + 2 * nfreq + 4:
        raise CorruptPayload("truncated rANS frequency table")
    freq = np.frombuffer(buf, dtype="<u2", count=nfreq, offset=offset).astype(np.uint16)
    offset += 2 * nfreq
    (plen,) = _U32.unpack_from(buf, offset)
    offset += 4
    if len(buf) < offset + plen:
        raise CorruptPayload("truncated rANS payload")
    payload = bytes(buf[offset : offset + plen])
    stream = RansStream(symbol_bits, table_log, count, freq, payload)
    return stream, offset + plen


def stream_from_bytes(buf: bytes) -> RansStream:
    stream, end = read_stream(buf, 0)
    if end != len(buf):
        raise CorruptPayload("trailing bytes after rANS stream")
    return stream


def empirical_entropy_bytes(symbols) -> float:
    """Shannon bound ``H * count / 8`` from the empirical symbol distribution."""
    sym = np.asarray(symbols, dtype=np.int64).ravel()
    if sym.size == 0:
        return 0.0
    p = np.bincount(sym) / sym.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum() * sym.size / 8)
