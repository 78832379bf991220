"""Scenario configs for early-exit simulation across one or more edge devices."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .channel import ChannelParams
from .early_exit import (
    AnalyticSizer,
    ComputeProfile,
    ExitDecision,
    LatencyBudget,
    MeasuredSizer,
    early_exit,
    measure_compression_ratio,
    offload_accounting,
)
from .errors import SplitwireError
from .planner import DeploymentPlan
from .resources import PRESETS, ModelProfile, load_profile
from .sweep import thread_count
from .tabq import TabqConfig

KNOWN_KEYS = {
    "plan", "profile", "max_tokens", "deadline_s", "compute_profile", "channel",
    "size_source", "devices", "tabq", "compression_ratio", "request_tokens",
    "seed", "rate_mode",
}


@dataclass(frozen=True)
class Scenario:
    profile: ModelProfile
    plan: DeploymentPlan
    max_tokens: int
    deadlines: tuple
    compute: ComputeProfile
    channel: ChannelParams
    size_source: str = "analytic"
    tau: float = 5.0
    tabq: TabqConfig = TabqConfig()
    compression_ratio: float | None = None
    request_tokens: int | None = None
    seed: int = 0
    rate_mode: str = "direct"

    @property
    def devices(self) -> int:
        return len(self.deadlines)


def _tabq_from(d: dict):
    d = dict(d)
    tau = float(d.pop("tau", 5.0))
    cfg = TabqConfig(
        q_max_bits=int(d.pop("qmax", d.pop("q_max_bits", 4))),
        q_min_bits=int(d.pop("qmin", d.pop("q_min_bits", 2))),
        delta=float(d.pop("delta", 0.2)),
    )
    if d:
        raise SplitwireError(f"unknown keys {sorted(d)}")
    return tau, cfg


def load_scenario(src, base_dir=None) -> Scenario:
    """Parse and validate a scenario dict or JSON file, reporting every bad field at once."""
    if not isinstance(src, dict):
        path = Path(src)
        if not path.exists():
            raise SplitwireError(f"scenario file not found: {path}")
        base_dir = path.parent
        try:
            src = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise SplitwireError(f"{path}: invalid JSON ({e})") from None
    base_dir = Path(base_dir or ".")
    errors = []
    out = {}

    def field(name, fn, required=True):
        if name not in src:
            if required:
                errors.append(f"{name}: missing")
            return
        try:
            out[name] = fn(src[name])
        except (SplitwireError, KeyError, TypeError, ValueError) as e:
            errors.append(f"{name}: {e}")

    unknown = set(src) - KNOWN_KEYS
    if unknown:
        errors.append(f"unknown keys: {sorted(unknown)}")

    def plan_of(v):
        if isinstance(v, str):
            p = base_dir / v
            if not p.exists():
                raise SplitwireError(f"plan file not found: {p}")
            v = json.loads(p.read_text())
        return DeploymentPlan.from_dict(v)

    def profile_of(v):
        if isinstance(v, str) and v not in PRESETS:
            v = str(base_dir / v)
        return load_profile(v)

    def positive_int(v):
        n = int(v)
        if n < 1 or n != v:
            raise SplitwireError(f"must be a positive integer, got {v!r}")
        return n

    def deadlines_of(v):
        vals = v if isinstance(v, list) else [v]
        return tuple(LatencyBudget(float(x)).deadline for x in vals)

    def size_source_of(v):
        if v not in ("analytic", "measured"):
            raise SplitwireError(f"must be 'analytic' or 'measured', got {v!r}")
        return v

    def rate_mode_of(v):
        if v not in ("direct", "paper-g"):
            raise SplitwireError(f"must be 'direct' or 'paper-g', got {v!r}")
        return v

    def ratio_of(v):
        r = float(v)
        if not 0 < r:
            raise SplitwireError("must be > 0")
        return r

    field("plan", plan_of)
    field("profile", profile_of, required=False)
    field("max_tokens", positive_int)
    field("deadline_s", deadlines_of)
    field("compute_profile", ComputeProfile.from_dict)
    field("channel", ChannelParams.from_dict, required=False)
    field("size_source", size_source_of, required=False)
    field("devices", positive_int, required=False)
    field("tabq", _tabq_from, required=False)
    field("compression_ratio", ratio_of, required=False)
    field("request_tokens", positive_int, required=False)
    field("seed", int, required=False)
    field("rate_mode", rate_mode_of, required=False)

    profile = out.get("profile") or load_profile("llama2-7b")
    if "plan" in out:
        try:
            out["plan"].scheme.validate(profile, check_menus=False)
        except SplitwireError as e:
            errors.append(f"plan: {e}")
    deadlines = out.get("deadline_s", ())
    if "devices" in out and deadlines:
        n = out["devices"]
        if len(deadlines) == 1:
            deadlines = deadlines * n
        elif len(deadlines) != n:
            errors.append(f"devices: {n} devices but {len(deadlines)} deadlines")
    if errors:
        raise SplitwireError("invalid scenario:\n  " + "\n  ".join(errors))

    tau, cfg = out.get("tabq", (5.0, TabqConfig()))
    return Scenario(
        profile=profile,
        plan=out["plan"],
        max_tokens=out["max_tokens"],
        deadlines=deadlines,
        compute=out["compute_profile"],
        channel=out.get("channel", ChannelParams()),
        size_source=out.get("size_source", "analytic"),
        tau=tau,
        tabq=cfg,
        compression_ratio=out.get("compression_ratio"),
        request_tokens=out.get("request_tokens"),
        seed=out.get("seed", 0),
        rate_mode=out.get("rate_mode", "direct"),
    )


def make_sizer(sc: Scenario) -> AnalyticSizer:
    scheme = sc.plan.scheme
    if sc.size_source == "measured":
        return MeasuredSizer(sc.profile, scheme, sc.max_tokens, sc.tau, sc.tabq, seed=sc.seed)
    ratio = sc.compression_ratio
    if ratio is None:
        ratio = measure_compression_ratio(
            sc.profile.hidden, scheme.act_bits(scheme.split_layer), sc.tau, sc.tabq, seed=sc.seed
        )
    return AnalyticSizer(sc.profile, scheme, min(1.0, ratio))


def simulate(sc: Scenario, threads: int | None = None) -> list[ExitDecision]:
    """One decision per device, in device order. Raises on the first unsatisfiable device."""
    sizer = make_sizer(sc)

    def run(deadline):
        return early_exit(
            sc.plan, sc.max_tokens, LatencyBudget(deadline), sc.compute, sc.channel, sizer, sc.rate_mode
        )

    with ThreadPoolExecutor(max_workers=threads or thread_count()) as ex:
        return list(ex.map(run, sc.deadlines))


CSV_COLUMNS = (
    "device", "deadline_s", "tokens_sent", "exit_layer", "i_kv", "compressed", "stage",
    "payload_bits", "total_latency", "depth", "edge_tokens", "server_tokens",
)


def decisions_csv(sc: Scenario, decisions) -> str:
    request = sc.request_tokens or sc.max_tokens
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, (dl, d) in enumerate(zip(sc.deadlines, decisions)):
        edge, server = offload_accounting(d, request)
        w.writerow([
            i, repr(dl), d.tokens_sent, d.exit_layer, d.i_kv, int(d.compressed), d.stage,
            d.payload_bits, repr(d.total_latency), d.depth, edge, server,
        ])
    return buf.getvalue()
