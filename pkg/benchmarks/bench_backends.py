"""Compiled vs numpy kernels on the same matrices.

    python3 benchmarks/bench_backends.py [--sizes 256 512 1024] [--reps 200] [--csv out.csv]

Reports the median time per matrix-vector product for each backend and the
speedup of the compiled one, plus a whole-sample inventory estimate.
"""

import argparse
import csv
import sys

from wavernn_engine import kernels
from wavernn_engine.bench import benchmark_inventory, benchmark_matvec, format_table
from wavernn_engine.sparse import BlockShape

CASES = [(None, 0.0), (BlockShape(16, 1), 0.95), (BlockShape(4, 4), 0.95),
         (BlockShape(1, 1), 0.95)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[256, 512, 1024])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)

    have = kernels.available()
    if "compiled" not in have:
        print("compiled backend not built; only the numpy timings are shown", file=sys.stderr)

    rows = []
    for n in args.sizes:
        for block, sparsity in CASES:
            times = {}
            for name in have:
                with kernels.using(name):
                    times[name] = benchmark_matvec(n, n, sparsity, block, reps=args.reps).median_ns
            speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            rows.append((n, "dense" if block is None else str(block), sparsity,
                         *(f"{times[b] / 1e3:.1f}" for b in have), f"{speedup:.1f}x"))
    header = ("size", "type", "sparsity", *(f"{b}_us" for b in have), "speedup")
    print(format_table(header, rows))

    print()
    inv = []
    for name in have:
        with kernels.using(name):
            for block, sparsity in CASES[:2]:
                r = benchmark_inventory(896 if block is None else 1792, sparsity, block,
                                        reps=max(20, args.reps // 4))
                inv.append((name, r.hidden, r.block, f"{r.samples_per_sec:,.0f}"))
    print(format_table(("backend", "hidden", "type", "samples/sec"), inv))

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)


if __name__ == "__main__":
    main()
