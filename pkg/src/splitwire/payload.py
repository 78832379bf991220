"""Edge-side compression pipeline and the SWP1 wire format.

Layout (little-endian)::

    header   24 B  magic "SWP1", u8 version, u8 flags (bit0 = KV slice),
                   u16 layer, u32 rows (w), u16 heads, u16 head_dim, f32 tau, u32 cols
    CSR      u32 nnz, u32 row_ptr[rows+1], u32 col_idx[nnz], f32 values[nnz]
    rows     per token: u8 bits, f32 scale, i32 zero, sign bitmap ceil(cols/8) B
             (bit i of byte k -> element 8k+i, set = negative), then the rANS stream
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptPayload, SplitwireError
from .rans import RansStream, rans_decode, rans_encode, read_stream
from .split import CsrMatrix, csr_block_size, read_csr_block, threshold_split, write_csr_block
from .tabq import QuantRow, TabqConfig, dequantize_codes, qmax_for, tabq_tensor
from .tensor import ActivationTensor

PAYLOAD_MAGIC = b"SWP1"
PAYLOAD_VERSION = 1
FLAG_KV = 0x01

_HEADER = struct.Struct("<4sBBHIHHfI")
_ROW_HEAD = struct.Struct("<Bfi")
HEADER_BYTES = _HEADER.size
assert HEADER_BYTES == 24


@dataclass(frozen=True)
class PayloadMeta:
    """Routing metadata carried in the header; ``heads * head_dim`` must equal the width."""

    layer: int = 0
    heads: int = 0
    head_dim: int = 0
    is_kv: bool = False

    def resolve(self, cols: int) -> "PayloadMeta":
        heads, head_dim = self.heads, self.head_dim
        if heads == 0 and head_dim == 0:
            heads, head_dim = (1, cols) if cols <= 0xFFFF else (0, 0)
        if (heads or head_dim) and heads * head_dim != cols:
            raise SplitwireError(f"heads * head_dim = {heads * head_dim} does not match width {cols}")
        if not (0 <= self.layer <= 0xFFFF and 0 <= heads <= 0xFFFF and 0 <= head_dim <= 0xFFFF):
            raise SplitwireError("layer, heads and head_dim must fit in u16")
        return PayloadMeta(self.layer, heads, head_dim, self.is_kv)


@dataclass(frozen=True, eq=False)
class RowRecord:
    bits: int
    scale: float
    zero: int
    sign_bits: bytes
    stream: RansStream

    @property
    def nbytes(self) -> int:
        return _ROW_HEAD.size + len(self.sign_bits) + self.stream.nbytes


@dataclass(frozen=True, eq=False)
class CompressedPayload:
    rows: int
    cols: int
    tau: float
    meta: PayloadMeta
    above: CsrMatrix
    records: list = field(default_factory=list)
    version: int = PAYLOAD_VERSION

    @property
    def above_bytes(self) -> int:
        return csr_block_size(self.above)

    @property
    def below_bytes(self) -> int:
        return sum(r.nbytes for r in self.records)

    def size(self) -> int:
        return HEADER_BYTES + self.above_bytes + self.below_bytes

    def to_bytes(self) -> bytes:
        flags = FLAG_KV if self.meta.is_kv else 0
        parts = [
            _HEADER.pack(
                PAYLOAD_MAGIC,
                self.version,
                flags,
                self.meta.layer,
                self.rows,
                self.meta.heads,
                self.meta.head_dim,
                self.tau,
                self.cols,
            ),
            write_csr_block(self.above),
        ]
        for r in self.records:
            parts.append(_ROW_HEAD.pack(r.bits, r.scale, r.zero))
            parts.append(r.sign_bits)
            parts.append(r.stream.to_bytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CompressedPayload":
        if len(buf) < HEADER_BYTES:
            raise CorruptPayload("payload shorter than its header")
        magic, version, flags, layer, rows, heads, head_dim, tau, cols = _HEADER.unpack_from(buf)
        if magic != PAYLOAD_MAGIC:
            raise CorruptPayload(f"bad payload magic {magic!r}")
        if version != PAYLOAD_VERSION:
            raise CorruptPayload(f"unsupported payload version {version}")
        if cols == 0:
            raise CorruptPayload("payload declares zero columns")
        if (heads or head_dim) and heads * head_dim != cols:
            raise CorruptPayload("header heads * head_dim disagrees with the width")
        meta = PayloadMeta(layer, heads, head_dim, bool(flags & FLAG_KV))
        above, off = read_csr_block(buf, HEADER_BYTES, rows, cols)
        sign_len = (cols + 7) // 8
        records = []
        for _ in range(rows):
            if len(buf) < off + _ROW_HEAD.size + sign_len:
                raise CorruptPayload("payload truncated inside a row record")
            bits, scale, zero = _ROW_HEAD.unpack_from(buf, off)
            off += _ROW_HEAD.size
            if not 2 <= bits <= 16 or not (np.isfinite(scale) and scale > 0):
                raise CorruptPayload(f"bad row record (bits={bits}, scale={scale})")
            sign_bits = bytes(buf[off : off + sign_len])
            off += sign_len
            stream, off = read_stream(buf, off)
            if stream.symbol_bits != bits - 1 or stream.symbol_count != cols:
                raise CorruptPayload("row stream does not match its record header")
            records.append(RowRecord(bits, scale, zero, sign_bits, stream))
        if off != len(buf):
            raise CorruptPayload(f"{len(buf) - off} trailing bytes after the last row")
        return cls(rows, cols, float(tau), meta, above, records, version)


def _record_from_row(q: QuantRow) -> RowRecord:
    signs = np.packbits(q.negative, bitorder="little").tobytes()
    return RowRecord(
        bits=q.bits,
        scale=q.scale,
        zero=q.zero,
        sign_bits=signs,
        stream=rans_encode(q.codes, q.bits - 1),
    )


def compress(
    t: ActivationTensor, tau: float, cfg: TabqConfig, meta: PayloadMeta | None = None
) -> CompressedPayload:
    """Threshold-split, CSR-code the outliers, TAB-Q and rANS-code the bulk rows."""
    meta = (meta or PayloadMeta()).resolve(t.cols)
    if t.rows > 0xFFFFFFFF:
        raise SplitwireError("too many rows for the u32 header field")
    pair = threshold_split(t, tau)
    rows = tabq_tensor(pair.below, cfg)
    records = [_record_from_row(q) for q in rows]
    return CompressedPayload(
        rows=t.rows,
        cols=t.cols,
        tau=float(np.float32(tau)),
        meta=meta,
        above=pair.above,
        records=records,
    )


def decode_rows(p: CompressedPayload) -> list[QuantRow]:
    """Entropy-decode each row record back into quantized codes and signs."""
    out = []
    for r in p.records:
        codes = rans_decode(r.stream)
        if codes.size and codes.max() > qmax_for(r.bits):
            raise CorruptPayload("decoded code exceeds the row's range")
        neg = np.unpackbits(np.frombuffer(r.sign_bits, dtype=np.uint8), bitorder="little")
        out.append(QuantRow(r.bits, r.scale, r.zero, codes, neg[: p.cols].astype(bool)))
    return out


def decompress(p: CompressedPayload) -> ActivationTensor:
    """Dequantize the bulk rows and add back the exact outliers."""
    if isinstance(p, (bytes, bytearray, memoryview)):
        p = CompressedPayload.from_bytes(bytes(p))
    if p.version != PAYLOAD_VERSION:
        raise CorruptPayload(f"unsupported payload version {p.version}")
    if len(p.records) != p.rows:
        raise CorruptPayload("row record count does not match the header")
    out = np.zeros((p.rows, p.cols), dtype=np.float32)
    for i, q in enumerate(decode_rows(p)):
        mag = dequantize_codes(q.codes, q.scale, q.zero).astype(np.float32)
        out[i] = np.where(q.negative, -mag, mag)
    p.above.validate()
    if p.above.nnz:
        r = np.repeat(np.arange(p.rows), np.diff(p.above.row_ptr.astype(np.int64)))
        out[r, p.above.col_idx.astype(np.int64)] += p.above.values
    if not np.isfinite(out).all():
        raise CorruptPayload("reconstruction is not finite")
    return ActivationTensor(out)


def payload_size_bytes(p: CompressedPayload) -> int:
    return p.size()


def prefix_sizes(p: CompressedPayload) -> np.ndarray:
    """``out[r]`` is the exact size of the payload built from the first ``r`` rows.

    Rows are coded independently, so prefixes need no recompression.
    """
    r = np.arange(p.rows + 1, dtype=np.int64)
    row_bytes = np.concatenate(([0], np.cumsum([rec.nbytes for rec in p.records], dtype=np.int64)))
    nnz = p.above.row_ptr.astype(np.int64)
    # header + u32 nnz + row_ptr[r+1] + (col, value) pairs + row records
    return HEADER_BYTES + 4 + 4 * (r + 1) + 8 * nnz + row_bytes.astype(np.int64)


def baseline_size_bytes(rows: int, cols: int) -> int:
    """Uncompressed float32 transfer of the same tensor plus the fixed header."""
    return rows * cols * 4 + HEADER_BYTES


def row_scales(p: CompressedPayload) -> np.ndarray:
    return np.array([np.float32(r.scale) for r in p.records], dtype=np.float64)


def save_payload(path, p: CompressedPayload) -> None:
    Path(path).write_bytes(p.to_bytes())


def load_payload(path) -> CompressedPayload:
    return CompressedPayload.from_bytes(Path(path).read_bytes())
