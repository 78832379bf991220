"""Pick a split layer and bit-widths for an edge device with a memory cap.

Uses the bundled llama2-7b accuracy fixture and shows how the choice
moves as the memory budget shrinks.
"""

import argparse
from importlib import resources

from splitwire.errors import Infeasible
from splitwire.planner import AccuracyTable, PlanConstraints, parse_bytes, plan
from splitwire.resources import preset_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-tokens", type=int, default=350)
    ap.add_argument("--caps", nargs="+", default=["inf", "16GiB", "12GiB", "11.5GiB", "8GiB"])
    args = ap.parse_args()

    profile = preset_profile("llama2-7b")
    text = (resources.files("splitwire") / "data" / "llama2-7b-accuracy.csv").read_text()
    table = AccuracyTable.from_csv(text, tolerance=1.0)
    print(f"accuracy floor {table.floor:.2f} (best {table.base:.2f} minus 1 point)")
    for cap in args.caps:
        cons = PlanConstraints(parse_bytes(cap), args.max_tokens)
        try:
            p = plan(profile, table, cons)
        except Infeasible as e:
            print(f"{cap:>8}: infeasible, binding {', '.join(e.binding)}")
            continue
        s = p.scheme
        print(f"{cap:>8}: split after layer {s.split_layer}, weights {s.qw1}/{s.qw2} bits, "
              f"activations {s.qa1}/{s.qa2} bits, {p.memory_used / 2**30:.2f} GiB, acc {p.accuracy:.2f}")


if __name__ == "__main__":
    main()
