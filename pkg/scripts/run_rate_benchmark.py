#!/usr/bin/env python3
"""Run the oracle-complexity benchmark suite and print the fitted rates.

Example:
    python3 scripts/run_rate_benchmark.py --config configs/default_bench.json \
        --out results/bench --jobs 4
"""

import argparse
import json
import sys

from saddleopt.cli import BenchConfig, run_suite


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", required=True, help="benchmark config (JSON)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    cfg = BenchConfig.from_file(args.config)
    summary = run_suite(cfg, args.out, jobs=args.jobs)
    for key, fit in summary["rate_fits"].items():
        tag = " (degenerate)" if fit["degenerate"] else ""
        print(f"{key}: slope {fit['slope']:.4f} "
              f"+/- {fit['half_width']:.4f}{tag}")
    print(json.dumps({k: summary[k] for k in
                      ("rows", "flagged_rows", "unmet_rows", "exit_code")}))
    return summary["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
