"""Training-data ablation: rerun a config keeping the earliest fraction of train+valid per assay."""
import argparse
import dataclasses

from admetgnn import errors
from admetgnn.config import load_run_config
from admetgnn.evalharness import run_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("config")
    p.add_argument("--keep", type=float, nargs="+", default=[0.85, 0.9, 0.95, 1.0])
    args = p.parse_args()
    base = load_run_config(args.config)

    print(f"{'keep':>6}  {'assay':<14}{'method':<26}{'R2':>8}{'n_train':>9}")
    for keep in args.keep:
        spec = dataclasses.replace(base.split, kind="ablation", ablation_keep_fraction=keep)
        cfg = dataclasses.replace(base, split=spec, output_dir=base.output_dir / f"ablation_{keep:g}")
        try:
            result = run_benchmark(cfg)
        except errors.EmptyPartition as exc:
            # small datasets can lose their whole validation window
            print(f"{keep:>6.2f}  skipped: {exc}")
            continue
        for r in sorted(result.report.rows, key=lambda r: (r.assay, r.method)):
            print(f"{keep:>6.2f}  {r.assay:<14}{r.method:<26}{r.r2:>8.3f}{r.n_train:>9}")


if __name__ == "__main__":
    main()
