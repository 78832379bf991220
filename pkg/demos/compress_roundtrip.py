"""Walk one synthetic activation tensor through the two-stage compressor.

Run:  python3 demos/compress_roundtrip.py --rows 128 --cols 5120 --tau 5
"""

import argparse

import numpy as np

from splitwire import TabqConfig, compress, decompress, synth_activations, threshold_split
from splitwire.payload import CompressedPayload, baseline_size_bytes, row_scales
from splitwire.tensor import STATS_PRESETS


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rows", type=int, default=128)
    ap.add_argument("--cols", type=int, default=5120)
    ap.add_argument("--tau", type=float, default=5.0)
    ap.add_argument("--qmax", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t = synth_activations(args.rows, args.cols, STATS_PRESETS["llama2-13b-fig4"], args.seed)
    print(f"tensor {t.rows}x{t.cols}, max |t| = {np.abs(t.data).max():.1f}")

    pair = threshold_split(t, args.tau)
    print(f"threshold {args.tau}: {pair.above.nnz} outliers go to the sparse part "
          f"({pair.above.nnz / t.data.size:.2e} of all elements)")

    p = compress(t, args.tau, TabqConfig(q_max_bits=args.qmax))
    bits = np.array([r.bits for r in p.records])
    print(f"per-row bit-widths: min {bits.min()}, mean {bits.mean():.2f}, max {bits.max()}")

    wire = p.to_bytes()
    base = baseline_size_bytes(t.rows, t.cols)
    print(f"payload {len(wire)} bytes vs {base} raw ({base / len(wire):.1f}x smaller)")
    print(f"  sparse part {p.above_bytes} bytes, quantized part {p.below_bytes} bytes")

    back = decompress(CompressedPayload.from_bytes(wire)).data
    above = (np.abs(t.data) >= args.tau) & (t.data != 0)
    err = np.abs(back.astype(np.float64) - t.data)
    print(f"outliers restored bit-exactly: {np.array_equal(back[above], t.data[above])}")
    print(f"worst bulk error {err[~above].max():.4f}, largest row scale {row_scales(p).max():.4f}")


if __name__ == "__main__":
    main()
