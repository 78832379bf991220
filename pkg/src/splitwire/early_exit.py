"""Deadline-constrained early exit for token-by-token split inference.

The simulator walks tokens ``w = 1..max_tokens`` and exit layers
``ell = 1..L``. When the latency of the next step breaks the deadline it
falls back in a fixed order: compress the split output, then stop sending
the KV cache, then give back tokens until the deadline holds again.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import ChannelParams, epsilon_latency, optimal_rate
from .errors import BudgetUnsatisfiable, SplitwireError
from .payload import compress, prefix_sizes
from .planner import DeploymentPlan
from .resources import ModelProfile, QuantScheme, io_bits
from .tabq import TabqConfig
from .tensor import STATS_PRESETS, OutlierStats, synth_activations


@dataclass(frozen=True)
class ComputeProfile:
    """On-device latency ``L_c(w)`` in seconds.

    Either affine (``a + b*w``) or a table of ``(w, seconds)`` points,
    linearly interpolated and extended past the last point with the last slope.
    """

    a: float = 0.0
    b: float = 0.0
    table: tuple | None = None

    def __post_init__(self):
        if self.table is None:
            if self.a < 0 or self.b < 0:
                raise SplitwireError("affine compute profile needs a >= 0 and b >= 0")
            return
        pts = tuple(sorted((float(w), float(s)) for w, s in self.table))
        if not pts:
            raise SplitwireError("compute table must not be empty")
        ws = [p[0] for p in pts]
        secs = [p[1] for p in pts]
        if len(set(ws)) != len(ws):
            raise SplitwireError("compute table has duplicate token counts")
        if any(s < 0 for s in secs) or any(x > y for x, y in zip(secs, secs[1:])):
            raise SplitwireError("compute table must be non-negative and non-decreasing")
        object.__setattr__(self, "table", pts)

    def __call__(self, w: int) -> float:
        if self.table is None:
            return self.a + self.b * w
        ws = [p[0] for p in self.table]
        secs = [p[1] for p in self.table]
        if w <= ws[-1] or len(ws) == 1:
            return float(np.interp(w, ws, secs))
        slope = (secs[-1] - secs[-2]) / (ws[-1] - ws[-2])
        return secs[-1] + slope * (w - ws[-1])

    @classmethod
    def from_dict(cls, d: dict) -> "ComputeProfile":
        if "table" in d:
            return cls(table=tuple(tuple(p) for p in d["table"]))
        return cls(a=float(d.get("a", 0.0)), b=float(d.get("b", 0.0)))


@dataclass(frozen=True)
class LatencyBudget:
    deadline: float

    def __post_init__(self):
        if not self.deadline > 0:
            raise SplitwireError("deadline must be > 0")


@dataclass(frozen=True)
class ExitDecision:
    tokens_sent: int
    exit_layer: int
    i_kv: int
    payload_bits: int
    total_latency: float
    compressed: bool
    stage: str
    rate: float
    trace: tuple = field(default=(), compare=False)

    @property
    def depth(self) -> int:
        return self.tokens_sent * self.exit_layer

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        d["depth"] = self.depth
        return d


class AnalyticSizer:
    """Transfer sizes from the closed-form model; compression scales them by ``ratio``."""

    def __init__(self, profile: ModelProfile, scheme: QuantScheme, ratio: float = 1.0):
        if not 0 < ratio:
            raise SplitwireError("compression ratio must be positive")
        self.profile = profile
        self.scheme = scheme
        self.ratio = float(ratio)

    def raw_bits(self, w: int, ell: int, i_kv: int) -> int:
        if w == 0:
            return 0
        return io_bits(w, ell, i_kv, self.profile, self.scheme)

    def bits(self, w: int, ell: int, i_kv: int, compressed: bool) -> int:
        raw = self.raw_bits(w, ell, i_kv)
        if not compressed:
            return raw
        # sending raw is always an option, so compression never grows the payload
        return min(raw, math.ceil(raw * self.ratio))


class MeasuredSizer(AnalyticSizer):
    """Compressed sizes taken from real payloads built on synthetic activations.

    One ``max_tokens x hidden`` tensor is compressed once; the payload size of
    any token prefix follows exactly because rows are coded independently.
    A KV bundle is priced as one payload per cached slice.
    """

    def __init__(
        self,
        profile: ModelProfile,
        scheme: QuantScheme,
        max_tokens: int,
        tau: float = 5.0,
        cfg: TabqConfig | None = None,
        stats: OutlierStats | None = None,
        seed: int = 0,
    ):
        super().__init__(profile, scheme)
        cfg = cfg or TabqConfig()
        stats = stats or STATS_PRESETS["llama2-13b-fig4"]
        t = synth_activations(max_tokens, profile.hidden, stats, seed)
        self._prefix_bytes = prefix_sizes(compress(t, tau, cfg))
        # nothing is sent for an empty prefix
        self._prefix_bytes[0] = 0
        self.max_tokens = max_tokens

    def payload_bytes(self, rows: int) -> int:
        if not 0 <= rows <= self.max_tokens:
            raise SplitwireError(f"measured sizes cover 0..{self.max_tokens} tokens, asked {rows}")
        return int(self._prefix_bytes[rows])

    def bits(self, w: int, ell: int, i_kv: int, compressed: bool) -> int:
        raw = self.raw_bits(w, ell, i_kv)
        if not compressed or w == 0:
            return raw
        if i_kv:
            L = self.profile.num_layers
            nbytes = (
                2 * ell * self.payload_bytes(w)
                + 2 * (L - ell) * self.payload_bytes(w - 1)
                + self.payload_bytes(1)
            )
        else:
            nbytes = self.payload_bytes(w)
        return min(raw, 8 * nbytes)


def measure_compression_ratio(
    cols: int,
    raw_bits_per_element: int,
    tau: float = 5.0,
    cfg: TabqConfig | None = None,
    stats: OutlierStats | None = None,
    rows: int = 64,
    seed: int = 0,
) -> float:
    """Compressed payload bits over ``raw_bits_per_element`` bits per value."""
    cfg = cfg or TabqConfig()
    stats = stats or STATS_PRESETS["llama2-13b-fig4"]
    p = compress(synth_activations(rows, cols, stats, seed), tau, cfg)
    return 8 * p.size() / (rows * cols * raw_bits_per_element)


def total_latency(
    w: int,
    ell: int,
    scheme: QuantScheme,
    i_kv: int,
    rate: float,
    profile: ModelProfile,
    compute: ComputeProfile,
    channel: ChannelParams,
    payload_bits: int | None = None,
) -> float:
    """Local compute for ``w`` tokens plus worst-case transfer of the split output.

    ``payload_bits`` overrides the closed-form size (e.g. after compression).
    """
    if payload_bits is None:
        payload_bits = 0 if w == 0 else io_bits(w, ell, i_kv, profile, scheme)
    return compute(w) + epsilon_latency(payload_bits, rate, channel)


def early_exit(
    plan: DeploymentPlan,
    max_tokens: int,
    budget: LatencyBudget,
    compute: ComputeProfile,
    channel: ChannelParams,
    sizer: AnalyticSizer,
    rate_mode: str = "direct",
) -> ExitDecision:
    """Greedy early-exit search; see the module docstring for the fallback order."""
    if max_tokens < 1:
        raise SplitwireError("max_tokens must be >= 1")
    if plan.scheme != sizer.scheme:
        raise SplitwireError("sizer was built for a different quantization scheme than the plan")
    L = sizer.profile.num_layers
    D = budget.deadline
    rate = optimal_rate(channel, rate_mode)
    trace = []

    def evaluate(w, ell, i_kv, compressed):
        bits = sizer.bits(w, ell, i_kv, compressed)
        return compute(w) + epsilon_latency(bits, rate, channel), bits

    def decide(w, ell, i_kv, compressed, stage, lat, bits):
        return ExitDecision(w, ell, i_kv, int(bits), lat, compressed, stage, rate, tuple(trace))

    i_kv = 1
    stage = "none"
    last_ok = None
    for w in range(1, max_tokens + 1):
        for ell in range(1, L + 1):
            lat, bits = evaluate(w, ell, i_kv, False)
            if lat <= D:
                last_ok = (w, ell, i_kv, False, stage, lat, bits)
                continue
            trace.append(("over", w, ell, i_kv, bits, lat))
            lat, bits = evaluate(w, ell, i_kv, True)
            trace.append(("compress", w, ell, i_kv, bits, lat))
            if lat <= D:
                return decide(w, ell, i_kv, True, "compress" if stage == "none" else stage, lat, bits)
            i_kv = 0
            stage = "drop_kv"
            lat, bits = evaluate(w, ell, 0, True)
            trace.append(("drop_kv", w, ell, 0, bits, lat))
            if lat <= D:
                last_ok = (w, ell, 0, True, stage, lat, bits)
                continue
            ww = w
            while lat > D:
                ww -= 1
                if ww == 0:
                    if last_ok is None:
                        raise BudgetUnsatisfiable(
                            f"deadline {D} s cannot be met even for one token at layer 1 "
                            "with the KV cache dropped and compression on"
                        )
                    # nothing fits at this layer; keep the last step that met the deadline
                    return decide(*last_ok)
                lat, bits = evaluate(ww, ell, 0, True)
                trace.append(("reduce_tokens", ww, ell, 0, bits, lat))
            return decide(ww, ell, 0, True, "reduce_tokens", lat, bits)
    # every step fit; the final output is still compressed before it leaves the device
    lat, bits = evaluate(max_tokens, L, i_kv, True)
    return decide(max_tokens, L, i_kv, True, stage, lat, bits)


def oracle_depth(
    max_tokens: int,
    budget: LatencyBudget,
    compute: ComputeProfile,
    channel: ChannelParams,
    sizer: AnalyticSizer,
    rate_mode: str = "direct",
) -> tuple[int, int, int]:
    """Brute-force maximum of ``w * ell`` under the deadline, using the smallest payload option.

    Returns ``(depth, w, ell)``; ``(0, 0, 0)`` when nothing fits.
    """
    rate = optimal_rate(channel, rate_mode)
    best = (0, 0, 0)
    for w in range(0, max_tokens + 1):
        for ell in range(1, sizer.profile.num_layers + 1):
            bits = sizer.bits(w, ell, 0, True)
            if compute(w) + epsilon_latency(bits, rate, channel) <= budget.deadline:
                best = max(best, (w * ell, w, ell))
    return best


def offload_accounting(decision: ExitDecision, request_tokens: int) -> tuple[int, int]:
    """Tokens produced on the edge versus handed to the server for one request."""
    edge = min(decision.tokens_sent, request_tokens)
    return edge, request_tokens - edge


def aggregate_offload(decisions, request_tokens: int) -> tuple[int, int]:
    edge = server = 0
    for d in decisions:
        e, s = offload_accounting(d, request_tokens)
        edge += e
        server += s
    return edge, server
