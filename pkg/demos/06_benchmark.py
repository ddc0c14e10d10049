"""Time-vs-quality benchmark: PSNR as a function of the step budget.

Each budget B runs the full pipeline with B feature steps and B//2
weight steps over a small instance set; rows report mean wall time and
reconstruction quality. Coarse fits are cached across budgets.

Run: python3 demos/06_benchmark.py [--quick] [--out DIR]
"""

import argparse
import os
import tempfile
from pathlib import Path

from hybridinv import (ToyGenerator, format_table, make_instances,
                       render_curve, run_benchmark)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--quick", action="store_true",
                    help="budgets 5/10/20 on 1 instance")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    os.environ.setdefault("HYBRIDINV_CACHE",
                          tempfile.mkdtemp(prefix="hybridinv-bench"))
    state = ToyGenerator.from_seed(7)
    n = 1 if args.quick else 2
    budgets = [5, 10, 20] if args.quick else [10, 50, 100]
    instances = make_instances(state, n, seed=0)
    print(f"{n} instance(s), budgets {budgets}, "
          f"cache {os.environ['HYBRIDINV_CACHE']}")

    rows = run_benchmark(state, instances, budgets, no_cache=False)
    print()
    print(format_table(rows))
    render_curve(rows, out / "bench_curve.png")
    print(f"\nwrote {out}/bench_curve.png")


if __name__ == "__main__":
    main()
