"""Activation tensors, the synthetic outlier-heavy generator, and the SWT1 file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptPayload, SplitwireError

TENSOR_MAGIC = b"SWT1"
_TENSOR_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True, eq=False)
class ActivationTensor:
    """Dense ``rows x cols`` float32 activation slice (one row per token).

    ``data`` is made read-only on construction so tensors can be shared freely.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = self.data
        if arr.dtype != np.float32 or arr.ndim != 2:
            raise SplitwireError("ActivationTensor data must be a 2-D float32 array")
        if arr.shape[1] <= 0:
            raise SplitwireError("ActivationTensor needs at least one column")
        if not np.isfinite(arr).all():
            raise SplitwireError("ActivationTensor values must be finite")
        if arr.flags.writeable:
            arr = np.ascontiguousarray(arr).copy()
            arr.flags.writeable = False
            object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def head(self, rows: int) -> "ActivationTensor":
        """First ``rows`` token rows as a new tensor."""
        return ActivationTensor(self.data[:rows])

    def __eq__(self, other):
        if not isinstance(other, ActivationTensor):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
        )

    def __repr__(self):
        return f"ActivationTensor(rows={self.rows}, cols={self.cols})"


def make_tensor(rows: int, cols: int, values) -> ActivationTensor:
    """Build a tensor from a flat row-major sequence of ``rows * cols`` values."""
    if rows < 0 or cols <= 0:
        raise SplitwireError(f"invalid tensor dimensions {rows}x{cols}")
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size != rows * cols:
        raise SplitwireError(
            f"expected {rows * cols} values for a {rows}x{cols} tensor, got {flat.size}"
        )
    if not np.isfinite(flat).all():
        raise SplitwireError("tensor values must be finite")
    with np.errstate(over="ignore"):
        data = flat.astype(np.float32).reshape(rows, cols)
    if not np.isfinite(data).all():
        raise SplitwireError("tensor values overflow float32")
    return ActivationTensor(data)


@dataclass(frozen=True)
class OutlierStats:
    """Target statistics for :func:`synth_activations`.

    ``outlier_fraction`` of the elements are drawn uniformly from
    ``[threshold, 2*threshold]`` with a random sign; the rest follow a
    Laplace(0, ``bulk_scale``) law truncated below ``threshold``.
    """

    outlier_threshold: float
    outlier_fraction: float
    bulk_scale: float

    def __post_init__(self):
        if not self.outlier_threshold > 0:
            raise SplitwireError("outlier_threshold must be > 0")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise SplitwireError("outlier_fraction must lie in [0, 1]")
        if not self.bulk_scale > 0:
            raise SplitwireError("bulk_scale must be > 0")


# Fraction matches the measured Llama2-13B histogram (0.0005% above 100).
# bulk_scale is a free knob; 0.5 keeps the share of |v| >= 1 near 13.5%.
STATS_PRESETS = {
    "llama2-13b-fig4": OutlierStats(outlier_threshold=100.0, outlier_fraction=5e-6, bulk_scale=0.5),
}


def _f32_bracket(x: float) -> tuple[np.float32, np.float32]:
    """Largest float32 strictly below ``x`` and smallest float32 at or above it."""
    x32 = np.float32(x)
    if x32 < x:
        return x32, np.nextafter(x32, np.float32(np.inf))
    return np.nextafter(x32, np.float32(0)), x32


def synth_activations(rows: int, cols: int, stats: OutlierStats, seed: int) -> ActivationTensor:
    """Draw a deterministic synthetic activation tensor with the given outlier statistics."""
    if rows <= 0 or cols <= 0:
        raise SplitwireError("synth_activations needs rows > 0 and cols > 0")
    rng = np.random.default_rng(seed)
    n = rows * cols
    thr = float(stats.outlier_threshold)
    b = float(stats.bulk_scale)

    # inverse-CDF sample of an exponential truncated to [0, thr)
    u = rng.random(n)
    mag = -b * np.log1p(-u * -np.expm1(-thr / b))
    sign_neg = rng.random(n) < 0.5
    vals = np.where(sign_neg, -mag, mag).astype(np.float32)
    lo32, hi32 = _f32_bracket(thr)
    np.clip(vals, -lo32, lo32, out=vals)

    count = int(rng.binomial(n, stats.outlier_fraction)) if stats.outlier_fraction > 0 else 0
    if count:
        pos = rng.choice(n, size=count, replace=False)
        omag = rng.uniform(thr, 2.0 * thr, size=count)
        osign = np.where(rng.random(count) < 0.5, -1.0, 1.0)
        out = (omag * osign).astype(np.float32)
        # float32 rounding must not push an outlier under the cutoff
        out = np.where(np.abs(out) < thr, np.copysign(hi32, out), out)
        vals[pos] = out
    return ActivationTensor(vals.reshape(rows, cols))


def observed_outlier_fraction(t: ActivationTensor, threshold: float) -> float:
    if t.data.size == 0:
        return 0.0
    return float(np.count_nonzero(np.abs(t.data) >= threshold)) / t.data.size


def tensor_to_bytes(t: ActivationTensor) -> bytes:
    return _TENSOR_HEADER.pack(TENSOR_MAGIC, t.rows, t.cols) + t.data.astype("<f4").tobytes()


def tensor_from_bytes(buf: bytes) -> ActivationTensor:
    if len(buf) < _TENSOR_HEADER.size:
        raise CorruptPayload("tensor file shorter than its header")
    magic, rows, cols = _TENSOR_HEADER.unpack_from(buf)
    if magic != TENSOR_MAGIC:
        raise CorruptPayload(f"bad tensor magic {magic!r}")
    expected = _TENSOR_HEADER.size + 4 * rows * cols
    if len(buf) != expected:
        raise CorruptPayload(f"tensor file is {len(buf)} bytes, header implies {expected}")
    if cols == 0:
        raise CorruptPayload("tensor file declares zero columns")
    data = np.frombuffer(buf, dtype="<f4", offset=_TENSOR_HEADER.size).astype(np.float32)
    if not np.isfinite(data).all():
        raise CorruptPayload("tensor file contains non-finite values")
    return ActivationTensor(data.reshape(rows, cols))


def save_tensor(path, t: ActivationTensor) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> ActivationTensor:
    return tensor_from_bytes(Path(path).read_bytes())
