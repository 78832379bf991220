"""Token-wise adaptive-bit asymmetric integer quantization (TAB-Q).

Each token row is split into a sign bitmap and magnitudes. Magnitudes are
quantized with an asymmetric integer grid at a starting bit-width, then the
bit-width is lowered one step at a time while the mean code disagreement
against the rescaled starting codes stays within ``delta``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import SplitwireError
from .tensor import ActivationTensor

log = logging.getLogger(__name__)

_I32_MAX = 2**31 - 1


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def qmax_for(bits: int) -> int:
    return (1 << (bits - 1)) - 1


@dataclass(frozen=True)
class TabqConfig:
    """``q_max_bits`` is the sign-inclusive ceiling; magnitudes start one bit lower."""

    q_max_bits: int = 4
    q_min_bits: int = 2
    delta: float = 0.2
    literal_alg1: bool = False

    def __post_init__(self):
        if not (2 <= self.q_min_bits <= self.q_max_bits <= 16):
            raise SplitwireError(
                f"need 2 <= q_min_bits <= q_max_bits <= 16, got {self.q_min_bits}, {self.q_max_bits}"
            )
        if not self.delta >= 0:
            raise SplitwireError("delta must be >= 0")

    @property
    def start_bits(self) -> int:
        # with q_max_bits=2 the sign reservation would leave no magnitude level
        return max(self.q_max_bits - 1, self.q_min_bits)


@dataclass(frozen=True, eq=False)
class QuantRow:
    bits: int
    scale: float
    zero: int
    codes: np.ndarray
    negative: np.ndarray

    @property
    def q_max(self) -> int:
        return qmax_for(self.bits)

    def __len__(self):
        return int(self.codes.size)


def _scales_f32(tmin: np.ndarray, tmax: np.ndarray, bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row float32 scale and integer zero point for the given bit-width.

    Constant rows get ``scale = tmin`` and ``zero = -1`` (or ``scale = 1`` and
    ``zero = 0`` for all-zero rows) so their single code dequantizes to
    ``tmin`` exactly.
    """
    qmax = qmax_for(bits)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ((tmax - tmin) / qmax).astype(np.float32)
    degenerate = ~(s > 0) | ~np.isfinite(s)
    s = np.where(degenerate, np.where(tmin > 0, tmin, 1.0).astype(np.float32), s)
    s64 = s.astype(np.float64)
    z = np.where(degenerate, np.where(tmin > 0, -1.0, 0.0), -round_half_away(tmin / s64))
    # zero point must fit the i32 wire field; fall back to a grid anchored at 0
    wide = np.abs(z) > _I32_MAX
    if wide.any():
        s = np.where(wide, (tmax / qmax).astype(np.float32), s)
        z = np.where(wide, 0.0, z)
    return s, z.astype(np.int64)


def _aiq_rows(mags: np.ndarray, bits: int):
    """Quantize each row of non-negative ``mags`` at ``bits``; returns codes, scales, zeros."""
    if mags.shape[1] == 0:
        raise SplitwireError("cannot quantize an empty row")
    tmin = mags.min(axis=1)
    tmax = mags.max(axis=1)
    s, z = _scales_f32(tmin, tmax, bits)
    q = round_half_away(mags / s.astype(np.float64)[:, None] + z[:, None])
    codes = np.clip(q, 0, qmax_for(bits)).astype(np.int64)
    return codes, s, z


def aiq(values, bits: int):
    """Asymmetric integer quantization of a non-negative vector.

    Returns ``(codes, scale, zero)`` with ``codes`` in ``[0, 2**(bits-1) - 1]``.
    """
    if bits < 2:
        raise SplitwireError(f"aiq needs bits >= 2, got {bits}")
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise SplitwireError("aiq expects a non-empty 1-D vector")
    if not np.isfinite(v).all():
        raise SplitwireError("aiq input must be finite")
    if np.any(v < 0):
        raise SplitwireError("aiq input must be non-negative (feed magnitudes)")
    codes, s, z = _aiq_rows(v[None, :], bits)
    return codes[0], float(s[0]), int(z[0])


def dequantize_codes(codes, scale: float, zero: int) -> np.ndarray:
    return (np.asarray(codes, dtype=np.float64) - zero) * float(np.float32(scale))


def distortion(codes_ref, codes_q, shift: int) -> float:
    """Mean |floor(codes_ref / 2**shift) - codes_q| over the row."""
    ref = np.asarray(codes_ref, dtype=np.int64) >> shift
    q = np.asarray(codes_q, dtype=np.int64)
    return float(np.abs(ref - q).sum()) / q.size


def _select_bits(mags: np.ndarray, cfg: TabqConfig):
    """Run the bit-reduction loop for every row at once.

    Returns two per-row bit arrays: the tolerance rule (last width whose
    distortion stayed within ``delta``) and the literal rule (the first width
    that exceeded it). Rows that never exceed it land on ``q_min_bits`` in both.
    """
    start = cfg.start_bits
    n_rows, n = mags.shape
    codes0, _, _ = _aiq_rows(mags, start)
    chosen = np.full(n_rows, cfg.q_min_bits, dtype=np.int64)
    literal = np.full(n_rows, cfg.q_min_bits, dtype=np.int64)
    active = np.ones(n_rows, dtype=bool)
    if start == cfg.q_min_bits:
        chosen[:] = start
        literal[:] = start
        return chosen, literal
    for q in range(start - 1, cfg.q_min_bits - 1, -1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        codes_q, _, _ = _aiq_rows(mags[idx], q)
        ref = codes0[idx] >> (start - q)
        delta = np.abs(ref - codes_q).sum(axis=1) / n
        hit = delta > cfg.delta
        chosen[idx[hit]] = q + 1
        literal[idx[hit]] = q
        active[idx[hit]] = False
    return chosen, literal


def _quantize_rows(arr: np.ndarray, cfg: TabqConfig) -> list[QuantRow]:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise SplitwireError("TAB-Q needs rows with at least one element")
    if not np.isfinite(arr).all():
        raise SplitwireError("TAB-Q input must be finite")
    if arr.shape[0] == 0:
        return []
    negative = np.signbit(arr)
    mags = np.abs(arr).astype(np.float64)
    chosen, literal = _select_bits(mags, cfg)
    diverged = int(np.count_nonzero(chosen != literal))
    if diverged:
        log.debug("TAB-Q literal/tolerance rules disagree on %d of %d rows", diverged, arr.shape[0])
    bits = literal if cfg.literal_alg1 else chosen
    out: list[QuantRow] = [None] * arr.shape[0]  # type: ignore[list-item]
    for b in np.unique(bits):
        idx = np.flatnonzero(bits == b)
        codes, s, z = _aiq_rows(mags[idx], int(b))
        for j, i in enumerate(idx):
            out[i] = QuantRow(
                bits=int(b), scale=float(s[j]), zero=int(z[j]), codes=codes[j], negative=negative[i]
            )
    return out


def tabq_row(row, cfg: TabqConfig) -> QuantRow:
    """Quantize one token row with adaptive bit-width selection."""
    r = np.asarray(row, dtype=np.float32)
    if r.ndim != 1 or r.size == 0:
        raise SplitwireError("tabq_row expects a non-empty 1-D row")
    return _quantize_rows(r[None, :], cfg)[0]


def tabq_tensor(t_below: ActivationTensor, cfg: TabqConfig) -> list[QuantRow]:
    """Quantize each token row independently; bit-widths may differ per row."""
    return _quantize_rows(t_below.data, cfg)


def literal_divergences(arr, cfg: TabqConfig) -> np.ndarray:
    """Row indices where the literal and tolerance bit-selection rules disagree."""
    mags = np.abs(np.asarray(arr, dtype=np.float32)).astype(np.float64)
    chosen, literal = _select_bits(mags, cfg)
    idx = np.flatnonzero(chosen != literal)
    for i in idx:
        log.info("row %d: tolerance rule keeps %d bits, literal rule returns %d", i, chosen[i], literal[i])
    return idx


def dequantize(q: QuantRow) -> np.ndarray:
    """Signed reconstruction ``sign * (codes - zero) * scale`` as float32."""
    codes = np.asarray(q.codes)
    if codes.size and (codes.min() < 0 or codes.max() > q.q_max):
        raise SplitwireError(f"code outside [0, {q.q_max}] for a {q.bits}-bit row")
    mag = dequantize_codes(codes, q.scale, q.zero).astype(np.float32)
    return np.where(q.negative, -mag, mag)
