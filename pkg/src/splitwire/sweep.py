"""Payload size versus token count for a grid of thresholds and maximum bit-widths."""

from __future__ import annotations

import csv
import io
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields

from .errors import SplitwireError
from .payload import HEADER_BYTES, baseline_size_bytes, compress, prefix_sizes
from .tabq import TabqConfig
from .tensor import STATS_PRESETS, OutlierStats, synth_activations

DEFAULT_W = (1, 2, 4, 8, 16, 32, 64, 128, 256)
DEFAULT_TAU = (1.0, 5.0, 10.0)
DEFAULT_QMAX = (2, 4, 8)


@dataclass(frozen=True)
class SweepRow:
    w: int
    tau: float
    qmax: int
    payload_bytes: int
    baseline_bytes: int
    above_bytes: int
    below_bytes: int

    @property
    def above_share(self) -> float:
        return self.above_bytes / self.payload_bytes


COLUMNS = [f.name for f in fields(SweepRow)] + ["above_share"]


def thread_count() -> int:
    """Worker cap from ``SPLITWIRE_THREADS`` (default: CPU count)."""
    raw = os.environ.get("SPLITWIRE_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise SplitwireError(f"SPLITWIRE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise SplitwireError("SPLITWIRE_THREADS must be >= 1")
    return n


def _one_config(t, tau, qmax, ws, delta, q_min):
    cfg = TabqConfig(q_max_bits=qmax, q_min_bits=min(q_min, qmax), delta=delta)
    p = compress(t, tau, cfg)
    sizes = prefix_sizes(p)
    nnz = p.above.row_ptr
    out = []
    for w in ws:
        above = 4 + 4 * (w + 1) + 8 * int(nnz[w])
        total = int(sizes[w])
        out.append(SweepRow(w, float(tau), qmax, total, baseline_size_bytes(w, t.cols), above, total - above - HEADER_BYTES))
    return out


def run_sweep(
    ws=DEFAULT_W,
    taus=DEFAULT_TAU,
    qmaxes=DEFAULT_QMAX,
    cols: int = 5120,
    stats: OutlierStats | None = None,
    seed: int = 0,
    delta: float = 0.2,
    q_min: int = 2,
    threads: int | None = None,
) -> list[SweepRow]:
    """Compress one ``max(ws) x cols`` tensor per grid point and read off every prefix size."""
    ws = sorted(set(int(w) for w in ws))
    if not ws or ws[0] < 1:
        raise SplitwireError("token counts must be >= 1")
    stats = stats or STATS_PRESETS["llama2-13b-fig4"]
    t = synth_activations(ws[-1], cols, stats, seed)
    grid = list(itertools.product(taus, qmaxes))
    with ThreadPoolExecutor(max_workers=threads or thread_count()) as ex:
        chunks = list(ex.map(lambda g: _one_config(t, g[0], g[1], ws, delta, q_min), grid))
    rows = [r for c in chunks for r in c]
    rows.sort(key=lambda r: (r.tau, r.qmax, r.w))
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([*astuple(r), f"{r.above_share:.6f}"])
    return buf.getvalue()


def from_csv(text: str) -> list[SweepRow]:
    reader = csv.DictReader(io.StringIO(text))
    return [
        SweepRow(
            int(d["w"]), float(d["tau"]), int(d["qmax"]), int(d["payload_bytes"]),
            int(d["baseline_bytes"]), int(d["above_bytes"]), int(d["below_bytes"]),
        )
        for d in reader
    ]
