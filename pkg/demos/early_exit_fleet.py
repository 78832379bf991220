"""Early-exit decisions for a fleet of edge devices with different deadlines.

Each device generates tokens locally until sending the split output would
break its deadline, then falls back step by step. The last column counts
tokens the server still has to produce for a request of --request tokens.
"""

import argparse

from splitwire.channel import ChannelParams
from splitwire.early_exit import aggregate_offload, offload_accounting
from splitwire.scenario import load_scenario, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-tokens", type=int, nargs="+", default=[250, 350])
    ap.add_argument("--request", type=int, default=350)
    ap.add_argument("--measured", action="store_true", help="size payloads by compressing real tensors")
    args = ap.parse_args()

    deadlines = [0.2, 0.8, 3.0, 30.0, 300.0, 3000.0]
    for W in args.max_tokens:
        sc = load_scenario({
            "plan": {"scheme": {"split_layer": 5, "qw1": 4, "qw2": 16, "qa1": 4, "qa2": 16}},
            "max_tokens": W,
            "deadline_s": deadlines,
            "compute_profile": {"a": 0.02, "b": 0.004},
            "channel": ChannelParams().to_dict(),
            "size_source": "measured" if args.measured else "analytic",
            "request_tokens": args.request,
        })
        decisions = simulate(sc)
        print(f"\nmax tokens {W}")
        print("  deadline  tokens  layer  kv  stage          latency  server")
        for D, d in zip(deadlines, decisions):
            server = offload_accounting(d, args.request)[1]
            print(f"  {D:8.2f}  {d.tokens_sent:6d}  {d.exit_layer:5d}  {d.i_kv:2d}  {d.stage:13s}"
                  f"  {d.total_latency:7.3f}  {server:6d}")
        edge, server = aggregate_offload(decisions, args.request)
        print(f"  fleet: {edge} tokens on the edge, {server} left for the server")


if __name__ == "__main__":
    main()
