"""Regenerate the synthetic toy assay table used by tests and example configs."""
import argparse
from pathlib import Path

from admetgnn.synthetic import generate, write_csv

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(ROOT / "data" / "toy_assays.csv"))
    p.add_argument("--molecules", type=int, default=240)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--coverage", type=float, default=0.8, help="chance each assay is measured per molecule")
    args = p.parse_args()
    rows = generate(args.molecules, args.seed, args.noise, args.coverage)
    path = write_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {path}")


if __name__ == "__main__":
    main()
