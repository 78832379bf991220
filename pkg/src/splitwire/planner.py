"""Exhaustive split-layer / bit-width selection under accuracy and memory limits."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import Infeasible, SplitwireError
from .resources import ModelProfile, QuantScheme, kv_cache_bits, opsc_memory, psi

CSV_HEADER = ("ell", "qw1", "qw2", "qa1", "qa2", "accuracy")


def _key(scheme: QuantScheme) -> tuple:
    return (scheme.split_layer, scheme.qw1, scheme.qw2, scheme.qa1, scheme.qa2)


@dataclass
class AccuracyTable:
    """Measured accuracy per ``(ell, qw1, qw2, qa1, qa2)`` plus the acceptance floor."""

    entries: dict
    base: float
    tolerance: float = 1.0
    interpolate: str | None = None

    def __post_init__(self):
        for k, a in self.entries.items():
            if not 0 <= a <= 100:
                raise SplitwireError(f"accuracy {a} for {k} outside [0, 100]")
        if self.interpolate not in (None, "nearest"):
            raise SplitwireError(f"unknown interpolation {self.interpolate!r}")

    @property
    def floor(self) -> float:
        return self.base - self.tolerance

    def lookup(self, scheme: QuantScheme):
        key = _key(scheme)
        if key in self.entries:
            return self.entries[key]
        if self.interpolate == "nearest" and self.entries:
            # L1 distance over (ell, bits); ties go to the smallest key
            near = min(self.entries, key=lambda k: (sum(abs(a - b) for a, b in zip(k, key)), k))
            return self.entries[near]
        return None

    @classmethod
    def from_csv(cls, text: str, base=None, tolerance: float = 1.0, interpolate=None) -> "AccuracyTable":
        reader = csv.reader(io.StringIO(text))
        rows = [r for r in reader if r and not r[0].startswith("#")]
        if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
            raise SplitwireError(f"accuracy CSV must start with header {','.join(CSV_HEADER)}")
        entries = {}
        for lineno, r in enumerate(rows[1:], start=2):
            if len(r) != len(CSV_HEADER):
                raise SplitwireError(f"accuracy CSV line {lineno}: expected 6 fields")
            key = tuple(int(c) for c in r[:5])
            if key in entries:
                raise SplitwireError(f"accuracy CSV line {lineno}: duplicate key {key}")
            entries[key] = float(r[5])
        if base is None:
            if not entries:
                raise SplitwireError("cannot infer a base accuracy from an empty table")
            base = max(entries.values())
        return cls(entries, float(base), float(tolerance), interpolate)

    @classmethod
    def load(cls, path, **kw) -> "AccuracyTable":
        p = Path(path)
        if not p.exists():
            raise SplitwireError(f"accuracy table not found: {p}")
        return cls.from_csv(p.read_text(), **kw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in sorted(self.entries):
            w.writerow([*k, repr(self.entries[k])])
        return buf.getvalue()


@dataclass(frozen=True)
class PlanConstraints:
    """Memory cap in bytes and the token horizon; optional per-group weight metadata cost."""

    memory_cap: float
    max_tokens: int
    group_size: int | None = None
    overhead_bits_per_group: int = 0

    def __post_init__(self):
        if not self.memory_cap > 0:
            raise SplitwireError("memory_cap must be > 0")
        if self.max_tokens < 1:
            raise SplitwireError("max_tokens must be >= 1")
        if self.group_size is not None and self.group_size < 1:
            raise SplitwireError("group_size must be >= 1")
        if self.overhead_bits_per_group < 0:
            raise SplitwireError("overhead_bits_per_group must be >= 0")


@dataclass(frozen=True)
class DeploymentPlan:
    scheme: QuantScheme
    psi: int
    memory_used: int
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "scheme": asdict(self.scheme),
            "psi": self.psi,
            "memory_used": self.memory_used,
            "accuracy": self.accuracy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeploymentPlan":
        s = d["scheme"] if "scheme" in d else d
        scheme = QuantScheme(
            split_layer=int(s.get("split_layer", s.get("ell_w", 0))),
            qw1=int(s["qw1"]),
            qw2=int(s["qw2"]),
            qa1=int(s["qa1"]),
            qa2=int(s["qa2"]),
        )
        return cls(scheme, int(d.get("psi", 0)), int(d.get("memory_used", 0)), float(d.get("accuracy", 0.0)))


@dataclass(frozen=True)
class ReportRow:
    scheme: QuantScheme
    psi: int
    memory: int
    accuracy: float | None
    memory_ok: bool
    accuracy_ok: bool

    @property
    def feasible(self) -> bool:
        return self.memory_ok and self.accuracy_ok


def candidates(profile: ModelProfile):
    wm, am = profile.weight_bit_menu, profile.activation_bit_menu
    for ell in range(1, profile.num_layers + 1):
        for qw1, qw2 in itertools.product(wm, wm):
            for qa1, qa2 in itertools.product(am, am):
                yield QuantScheme(ell, qw1, qw2, qa1, qa2)


def edge_memory(profile: ModelProfile, scheme: QuantScheme, max_tokens: int, group_size=None, overhead_bits_per_group=0) -> int:
    """Weights plus the full-length KV cache, in whole bytes."""
    kv = kv_cache_bits(max_tokens, scheme.split_layer, profile, scheme)
    return opsc_memory(profile, scheme, group_size, overhead_bits_per_group) + -(-kv // 8)


def feasibility_report(profile: ModelProfile, table: AccuracyTable, constraints: PlanConstraints) -> list[ReportRow]:
    rows = []
    for s in candidates(profile):
        acc = table.lookup(s)
        mem = edge_memory(
            profile, s, constraints.max_tokens, constraints.group_size, constraints.overhead_bits_per_group
        )
        rows.append(
            ReportRow(
                scheme=s,
                psi=psi(profile, s),
                memory=mem,
                accuracy=acc,
                memory_ok=mem <= constraints.memory_cap,
                accuracy_ok=acc is not None and acc >= table.floor,
            )
        )
    return rows


def rank_key(row: ReportRow) -> tuple:
    """Sort key: best candidate first (higher psi, less memory, earlier split, smaller bits)."""
    return (-row.psi, row.memory, *_key(row.scheme))


def _near_miss(rows, table, constraints):
    def violation(r):
        mem = max(0.0, (r.memory - constraints.memory_cap) / constraints.memory_cap)
        acc = math.inf if r.accuracy is None else max(0.0, (table.floor - r.accuracy) / 100.0)
        return (mem + acc, rank_key(r))

    best = min(rows, key=violation)
    binding = []
    if not best.memory_ok:
        binding.append("memory")
    if not best.accuracy_ok:
        binding.append("accuracy")
    return best, binding


def plan(profile: ModelProfile, table: AccuracyTable, constraints: PlanConstraints) -> DeploymentPlan:
    """Feasible candidate with the largest activation precision (deterministic tie-break)."""
    rows = feasibility_report(profile, table, constraints)
    feasible = [r for r in rows if r.feasible]
    if not feasible:
        best, binding = _near_miss(rows, table, constraints)
        raise Infeasible(
            f"no feasible configuration; nearest miss {_key(best.scheme)} violates {' and '.join(binding)}",
            binding=binding,
            near_miss=best,
        )
    top = min(feasible, key=rank_key)
    return DeploymentPlan(scheme=top.scheme, psi=top.psi, memory_used=top.memory, accuracy=top.accuracy)


_UNITS = {
    "": 1, "b": 1,
    "kb": 10**3, "mb": 10**6, "gb": 10**9, "tb": 10**12,
    "kib": 2**10, "mib": 2**20, "gib": 2**30, "tib": 2**40,
}


def parse_bytes(text) -> int:
    """Parse sizes such as ``8GiB``, ``512MB`` or ``1e9``."""
    s = str(text).strip().lower().replace(" ", "")
    if s in ("inf", "infinity"):
        return math.inf
    i = len(s)
    while i and s[i - 1].isalpha():
        i -= 1
    num, unit = s[:i], s[i:]
    if unit not in _UNITS or not num:
        raise SplitwireError(f"cannot parse byte size {text!r}")
    return int(float(num) * _UNITS[unit])
