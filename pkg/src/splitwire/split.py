"""Threshold splitting of activations into a CSR outlier part and a dense bulk part."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptPayload, SplitwireError
from .tensor import ActivationTensor

_U32 = struct.Struct("<I")


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with u32 indices and float32 values."""

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def nbytes(self) -> int:
        """Encoded size: u32 row_ptr plus a (u32 column, f32 value) pair per entry."""
        return 4 * (self.rows + 1) + 8 * self.nnz

    def validate(self) -> None:
        rp, ci = self.row_ptr, self.col_idx
        if self.rows < 0 or self.cols <= 0:
            raise CorruptPayload(f"bad CSR dimensions {self.rows}x{self.cols}")
        if rp.shape != (self.rows + 1,):
            raise CorruptPayload("row_ptr must have rows + 1 entries")
        if rp[0] != 0 or rp[-1] != self.nnz or ci.size != self.nnz:
            raise CorruptPayload("row_ptr endpoints disagree with the stored entry count")
        if np.any(np.diff(rp.astype(np.int64)) < 0):
            raise CorruptPayload("row_ptr is not monotone")
        if self.nnz and int(ci.max()) >= self.cols:
            raise CorruptPayload("column index out of range")
        if self.nnz > 1:
            # strictly increasing within each row: any non-increase must sit on a row boundary
            step = np.diff(ci.astype(np.int64))
            bad = np.flatnonzero(step <= 0) + 1
            if bad.size and not np.isin(bad, rp[1:-1]).all():
                raise CorruptPayload("column indices not strictly increasing within a row")

    def to_dense(self) -> np.ndarray:
        return csr_decode(self)

    def __eq__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (
            (self.rows, self.cols) == (other.rows, other.cols)
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))
        )


def csr_encode(dense) -> CsrMatrix:
    """Store every nonzero entry of ``dense`` (row-major order)."""
    arr = np.asarray(dense, dtype=np.float32)
    if arr.ndim != 2:
        raise SplitwireError("csr_encode expects a 2-D array")
    if not np.isfinite(arr).all():
        raise SplitwireError("csr_encode input must be finite")
    return _csr_from_mask(arr, arr != 0)


def _csr_from_mask(arr: np.ndarray, mask: np.ndarray) -> CsrMatrix:
    rows, cols = arr.shape
    r, c = np.nonzero(mask)
    counts = np.bincount(r, minlength=rows)
    row_ptr = np.zeros(rows + 1, dtype=np.uint32)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrMatrix(
        rows=rows,
        cols=cols,
        row_ptr=row_ptr,
        col_idx=c.astype(np.uint32),
        values=arr[r, c].astype(np.float32),
    )


def csr_decode(csr: CsrMatrix) -> np.ndarray:
    csr.validate()
    out = np.zeros((csr.rows, csr.cols), dtype=np.float32)
    if csr.nnz:
        r = np.repeat(np.arange(csr.rows), np.diff(csr.row_ptr.astype(np.int64)))
        out[r, csr.col_idx.astype(np.int64)] = csr.values
    return out


def csr_positions(csr: CsrMatrix) -> tuple[np.ndarray, np.ndarray]:
    r = np.repeat(np.arange(csr.rows), np.diff(csr.row_ptr.astype(np.int64)))
    return r, csr.col_idx.astype(np.int64)


@dataclass(frozen=True)
class SplitPair:
    above: CsrMatrix
    below: ActivationTensor
    tau: float


def threshold_split(t: ActivationTensor, tau: float) -> SplitPair:
    """Move every element with ``|v| >= tau`` into a CSR matrix, leaving the rest dense.

    Zeros never enter the CSR part (they stay in ``below`` untouched), which
    keeps the split bit-exact for signed zeros when ``tau == 0``.
    """
    if not tau >= 0:
        raise SplitwireError(f"tau must be >= 0, got {tau}")
    arr = t.data
    mask = (np.abs(arr) >= tau) & (arr != 0)
    above = _csr_from_mask(arr, mask)
    below = np.where(mask, np.float32(0), arr)
    return SplitPair(above=above, below=ActivationTensor(below), tau=float(tau))


def merge(pair: SplitPair) -> ActivationTensor:
    above, below = pair.above, pair.below
    if (above.rows, above.cols) != below.shape:
        raise SplitwireError(
            f"cannot merge {above.rows}x{above.cols} outliers into {below.rows}x{below.cols} bulk"
        )
    above.validate()
    out = below.data.copy()
    r, c = csr_positions(above)
    out[r, c] = above.values
    return ActivationTensor(out)


def csr_block_size(csr: CsrMatrix) -> int:
    """Bytes used by the CSR block inside a payload (nnz prefix included)."""
    return 4 + csr.nbytes


def write_csr_block(csr: CsrMatrix) -> bytes:
    return b"".join(
        (
            _U32.pack(csr.nnz),
            csr.row_ptr.astype("<u4").tobytes(),
            csr.col_idx.astype("<u4").tobytes(),
            csr.values.astype("<f4").tobytes(),
        )
    )


def read_csr_block(buf, offset: int, rows: int, cols: int) -> tuple[CsrMatrix, int]:
    """Parse a CSR block starting at ``offset``; returns the matrix and the next offset."""
    need = offset + 4 + 4 * (rows + 1)
    if len(buf) < need:
        raise CorruptPayload("payload truncated inside the CSR block")
    (nnz,) = _U32.unpack_from(buf, offset)
    offset += 4
    end = offset + 4 * (rows + 1) + 8 * nnz
    if len(buf) < end:
        raise CorruptPayload("payload truncated inside the CSR block")
    row_ptr = np.frombuffer(buf, dtype="<u4", count=rows + 1, offset=offset).astype(np.uint32)
    offset += 4 * (rows + 1)
    col_idx = np.frombuffer(buf, dtype="<u4", count=nnz, offset=offset).astype(np.uint32)
    offset += 4 * nnz
    values = np.frombuffer(buf, dtype="<f4", count=nnz, offset=offset).astype(np.float32)
    offset += 4 * nnz
    csr = CsrMatrix(rows=rows, cols=cols, row_ptr=row_ptr, col_idx=col_idx, values=values)
    csr.validate()
    if not np.isfinite(values).all():
        raise CorruptPayload("non-finite value in the CSR block")
    return csr, offset
