"""Run a benchmark config and print the per-assay table."""
import argparse
import logging

from admetgnn.config import load_run_config
from admetgnn.evalharness import run_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("config", help="JSON run config, e.g. configs/toy_benchmark.json")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    result = run_benchmark(load_run_config(args.config))
    print(f"{'assay':<14}{'method':<26}{'R2':>8}{'CI low':>9}{'CI high':>9}{'n_test':>8}")
    for r in sorted(result.report.rows, key=lambda r: (r.assay, r.method)):
        print(f"{r.assay:<14}{r.method:<26}{r.r2:>8.3f}{r.ci_low:>9.3f}{r.ci_high:>9.3f}{r.n_test:>8}")
    for imp in result.report.improvements():
        pct = imp["percentage_improvement"]
        pct = f"{pct:.2f}%" if isinstance(pct, float) else pct
        print(f"{imp['assay']}: {imp['absolute_improvement']:+.3f} R2 ({pct})")
    print(f"report: {result.report_json}")


if __name__ == "__main__":
    main()
