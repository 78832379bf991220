"""Payload size as the token count grows, for a grid of thresholds and bit ceilings.

Prints a compact table; pass --csv to save the full sweep for plotting.
"""

import argparse
from collections import defaultdict

from splitwire.sweep import run_sweep, to_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cols", type=int, default=5120)
    ap.add_argument("--csv", help="write the sweep here")
    args = ap.parse_args()

    rows = run_sweep(cols=args.cols)
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(to_csv(rows))

    ws = sorted({r.w for r in rows})
    table = defaultdict(dict)
    base = {}
    for r in rows:
        table[(r.tau, r.qmax)][r.w] = r.payload_bytes / 1024
        base[r.w] = r.baseline_bytes / 1024
    print("KiB by token count".ljust(22) + "".join(f"{w:>9}" for w in ws))
    print("baseline".ljust(22) + "".join(f"{base[w]:9.1f}" for w in ws))
    for (tau, q), sizes in sorted(table.items()):
        print(f"tau={tau:g} qmax={q}".ljust(22) + "".join(f"{sizes[w]:9.1f}" for w in ws))

    print("\nshare of bytes spent on outliers at w=256:")
    for tau in sorted({r.tau for r in rows}):
        r = next(x for x in rows if x.tau == tau and x.qmax == 4 and x.w == ws[-1])
        print(f"  tau={tau:g}: {r.above_share:.3f}")


if __name__ == "__main__":
    main()
