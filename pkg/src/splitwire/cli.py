"""Command-line entry point.

Examples::

    splitwire synth --rows 64 --cols 5120 --seed 1 -o t.swt
    splitwire compress t.swt -o t.swp --tau 5 --qmax 4 --delta 0.2
    splitwire decompress t.swp -o back.swt --reference t.swt
    splitwire plan --profile llama2-7b --acc table.csv --mem-cap 8GiB --max-tokens 350
    splitwire simulate scenario.json --csv devices.csv
    splitwire sweep -o fig5.csv
    splitwire report --profile llama2-7b --ell 20 --qa 4 16 --w 128 --exit-layer 20

Exit codes: 0 ok, 2 bad or missing input, 3 infeasible plan or unmeetable deadline.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from importlib import resources as importlib_resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BudgetUnsatisfiable, Infeasible, SplitwireError
from .payload import (
    CompressedPayload,
    PayloadMeta,
    baseline_size_bytes,
    compress,
    decompress,
    row_scales,
)
from .planner import AccuracyTable, PlanConstraints, feasibility_report, parse_bytes, plan, rank_key
from .resources import QuantScheme, load_profile, size_report
from .scenario import decisions_csv, load_scenario, simulate
from .sweep import run_sweep, to_csv
from .tabq import TabqConfig
from .tensor import STATS_PRESETS, OutlierStats, load_tensor, save_tensor, synth_activations

EXIT_INPUT = 2
EXIT_INFEASIBLE = 3


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise SplitwireError(f"input file not found: {p}")
    return p


def _fixture(name: str) -> Path:
    return Path(str(importlib_resources.files("splitwire") / "data" / name))


def _tabq_cfg(args) -> TabqConfig:
    return TabqConfig(
        q_max_bits=args.qmax,
        q_min_bits=min(args.qmin, args.qmax),
        delta=args.delta,
        literal_alg1=args.literal_alg1,
    )


def _stats(args) -> OutlierStats:
    base = STATS_PRESETS[args.stats]
    return OutlierStats(
        outlier_threshold=args.threshold if args.threshold is not None else base.outlier_threshold,
        outlier_fraction=args.fraction if args.fraction is not None else base.outlier_fraction,
        bulk_scale=args.bulk_scale if args.bulk_scale is not None else base.bulk_scale,
    )


def _error_stats(original, p: CompressedPayload) -> dict:
    back = decompress(p).data.astype(np.float64)
    orig = original.data.astype(np.float64)
    above = (np.abs(original.data) >= p.tau) & (original.data != 0)
    err = np.abs(back - orig)
    bulk_err = np.where(above, 0.0, err)
    scales = row_scales(p)
    return {
        "max_bulk_error": float(bulk_err.max()) if bulk_err.size else 0.0,
        "max_scale": float(scales.max()) if scales.size else 0.0,
        "bulk_within_row_scale": bool((bulk_err <= scales[:, None]).all()) if bulk_err.size else True,
        "outliers_exact": bool(np.array_equal(back[above], orig[above])),
    }


def _payload_stats(p: CompressedPayload) -> dict:
    bits = [r.bits for r in p.records]
    return {
        "rows": p.rows,
        "cols": p.cols,
        "tau": p.tau,
        "payload_bytes": p.size(),
        "baseline_bytes": baseline_size_bytes(p.rows, p.cols),
        "above_bytes": p.above_bytes,
        "below_bytes": p.below_bytes,
        "above_nnz": p.above.nnz,
        "mean_bits": float(np.mean(bits)) if bits else 0.0,
        "layer": p.meta.layer,
        "is_kv": p.meta.is_kv,
    }


def cmd_synth(args) -> int:
    t = synth_activations(args.rows, args.cols, _stats(args), args.seed)
    save_tensor(args.output, t)
    print(_dump({"rows": t.rows, "cols": t.cols, "seed": args.seed, "output": str(args.output)}), end="")
    return 0


def cmd_compress(args) -> int:
    t = load_tensor(_input_path(args))
    meta = PayloadMeta(layer=args.layer, heads=args.heads, head_dim=args.head_dim, is_kv=args.kv)
    p = compress(t, args.tau, _tabq_cfg(args), meta)
    data = p.to_bytes()
    Path(args.output).write_bytes(data)
    stats = _payload_stats(p)
    stats.update(_error_stats(t, p))
    stats["output"] = str(args.output)
    print(_dump(stats), end="")
    return 0


def cmd_decompress(args) -> int:
    p = CompressedPayload.from_bytes(_input_path(args).read_bytes())
    t = decompress(p)
    save_tensor(args.output, t)
    stats = _payload_stats(p)
    if args.reference:
        ref = load_tensor(_existing(args.reference))
        if ref.shape != t.shape:
            raise SplitwireError(f"reference shape {ref.shape} does not match payload {t.shape}")
        stats.update(_error_stats(ref, p))
    stats["output"] = str(args.output)
    print(_dump(stats), end="")
    return 0


def _accuracy_table(args) -> AccuracyTable:
    path = _fixture("llama2-7b-accuracy.csv") if args.acc is None else _existing(args.acc)
    return AccuracyTable.from_csv(
        path.read_text(), base=args.acc_base, tolerance=args.acc_delta, interpolate=args.interpolate
    )


def _profile(ref):
    p = Path(str(ref))
    if p.suffix == ".json":
        _existing(p)
    return load_profile(str(ref))


def cmd_plan(args) -> int:
    profile = _profile(args.profile)
    table = _accuracy_table(args)
    cons = PlanConstraints(
        memory_cap=parse_bytes(args.mem_cap),
        max_tokens=args.max_tokens,
        group_size=args.group_size,
        overhead_bits_per_group=args.overhead_per_group,
    )
    if args.report:
        rows = sorted(feasibility_report(profile, table, cons), key=rank_key)
        lines = ["ell,qw1,qw2,qa1,qa2,psi,memory,accuracy,memory_ok,accuracy_ok,feasible"]
        for r in rows:
            s = r.scheme
            acc = "" if r.accuracy is None else repr(r.accuracy)
            lines.append(
                f"{s.split_layer},{s.qw1},{s.qw2},{s.qa1},{s.qa2},{r.psi},{r.memory},{acc},"
                f"{int(r.memory_ok)},{int(r.accuracy_ok)},{int(r.feasible)}"
            )
        Path(args.report).write_text("\n".join(lines) + "\n")
    try:
        result = plan(profile, table, cons)
    except Infeasible as e:
        print(f"infeasible: {e}", file=sys.stderr)
        if e.binding:
            print(f"binding constraint: {', '.join(e.binding)}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _emit(_dump(result.to_dict()), args.output)
    return 0


def cmd_simulate(args) -> int:
    sc = load_scenario(_existing(args.scenario))
    try:
        decisions = simulate(sc)
    except BudgetUnsatisfiable as e:
        print(f"unsatisfiable: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _emit(_dump([d.to_dict() for d in decisions]), args.output)
    if args.csv:
        Path(args.csv).write_text(decisions_csv(sc, decisions))
    return 0


def cmd_sweep(args) -> int:
    stats = _stats(args)
    rows = run_sweep(
        ws=args.w, taus=args.tau, qmaxes=args.qmax, cols=args.cols,
        stats=stats, seed=args.seed, delta=args.delta, q_min=args.qmin,
    )
    _emit(to_csv(rows), args.output)
    return 0


def cmd_report(args) -> int:
    out = {}
    if args.payload:
        p = CompressedPayload.from_bytes(_existing(args.payload).read_bytes())
        out["payload"] = _payload_stats(p)
    if args.profile:
        profile = _profile(args.profile)
        scheme = QuantScheme(args.ell, args.qw[0], args.qw[1], args.qa[0], args.qa[1])
        scheme.validate(profile, check_menus=False)
        exit_layer = args.exit_layer or args.ell
        rep = size_report(profile, scheme, args.w, exit_layer, args.i_kv)
        out["model"] = {
            "profile": profile.name,
            "scheme": asdict(scheme),
            "w": args.w,
            "exit_layer": exit_layer,
            "i_kv": args.i_kv,
            **asdict(rep),
        }
    if not out:
        raise SplitwireError("report needs --payload and/or --profile")
    _emit(_dump(out), args.output)
    return 0


def _add_io(p):
    p.add_argument("input", nargs="?", help="input file (or use --in)")
    p.add_argument("--in", dest="in_path", help=argparse.SUPPRESS)
    p.add_argument("-o", "--out", "--output", dest="output", required=True)


def _input_path(args) -> Path:
    path = args.input or args.in_path
    if not path:
        raise SplitwireError("no input file given")
    return _existing(path)


def _add_tabq(p):
    p.add_argument("--tau", type=float, default=5.0, help="outlier threshold (default 5)")
    p.add_argument("--qmax", type=int, default=4, help="maximum bit-width incl. sign (default 4)")
    p.add_argument("--qmin", type=int, default=2, help="minimum bit-width (default 2)")
    p.add_argument("--delta", type=float, default=0.2, help="distortion tolerance (default 0.2)")
    p.add_argument(
        "--literal-alg1",
        action="store_true",
        help="return the first width that breaks the tolerance (literal bit-reduction loop)",
    )


def _add_stats(p):
    p.add_argument("--stats", choices=sorted(STATS_PRESETS), default="llama2-13b-fig4")
    p.add_argument("--threshold", type=float, default=None, help="override outlier threshold")
    p.add_argument("--fraction", type=float, default=None, help="override outlier fraction")
    p.add_argument("--bulk-scale", type=float, default=None, help="override bulk dispersion")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitwire", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"splitwire {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log divergences and progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic activation tensor")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    _add_stats(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compress", help="tensor file -> payload file")
    _add_io(p)
    _add_tabq(p)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--heads", type=int, default=0)
    p.add_argument("--head-dim", type=int, default=0)
    p.add_argument("--kv", action="store_true", help="mark the payload as a KV slice")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="payload file -> tensor file")
    _add_io(p)
    p.add_argument("--reference", help="original tensor, for error statistics")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("plan", help="choose split layer and bit-widths")
    p.add_argument("--profile", default="llama2-7b", help="preset name or profile JSON")
    p.add_argument("--acc", help="accuracy CSV (default: bundled llama2-7b fixture)")
    p.add_argument("--acc-base", type=float, default=None, help="base accuracy (default: table max)")
    p.add_argument("--acc-delta", type=float, default=1.0, help="allowed accuracy drop (default 1)")
    p.add_argument("--interpolate", choices=["nearest"], default=None)
    p.add_argument("--mem-cap", required=True, help="edge memory cap, e.g. 8GiB")
    p.add_argument("--max-tokens", type=int, required=True)
    p.add_argument("--group-size", type=int, default=None, help="weights per quantization group")
    p.add_argument("--overhead-per-group", type=int, default=0, help="metadata bits per weight group")
    p.add_argument("--report", help="also write the full feasibility table as CSV")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run the early-exit simulation for a scenario")
    p.add_argument("scenario")
    p.add_argument("-o", "--output")
    p.add_argument("--csv", help="per-device CSV with offload accounting")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="payload size over tokens, thresholds and bit-widths")
    p.add_argument("--w", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32, 64, 128, 256])
    p.add_argument("--tau", type=float, nargs="+", default=[1.0, 5.0, 10.0])
    p.add_argument("--qmax", type=int, nargs="+", default=[2, 4, 8])
    p.add_argument("--qmin", type=int, default=2)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--cols", type=int, default=5120)
    _add_stats(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="size accounting for a scheme and/or a payload file")
    p.add_argument("--payload")
    p.add_argument("--profile")
    p.add_argument("--ell", type=int, default=1, help="split layer")
    p.add_argument("--qw", type=int, nargs=2, default=[16, 16], metavar=("QW1", "QW2"))
    p.add_argument("--qa", type=int, nargs=2, default=[16, 16], metavar=("QA1", "QA2"))
    p.add_argument("--w", type=int, default=1, help="tokens generated")
    p.add_argument("--exit-layer", type=int, default=None)
    p.add_argument("--i-kv", type=int, choices=[0, 1], default=1)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (Infeasible, BudgetUnsatisfiable) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SplitwireError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
