"""Part-count or local-dimension sweep on synthetic data, written as CSV."""
import argparse

from cmlsp import experiments
from cmlsp.cli import format_metric_table
from cmlsp.evalkit import METRICS
from cmlsp.formats import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("kind", choices=("parts", "dim"))
    ap.add_argument("--values", type=lambda s: [int(v) for v in s.split(",")],
                    help="comma-separated grid (defaults to the standard grid)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--out")
    args = ap.parse_args()

    values = args.values or (experiments.PARTS_GRID if args.kind == "parts" else experiments.DIM_GRID)
    rows = experiments.ablation(args.kind, values, seed=args.seed, epochs=args.epochs)
    print(format_metric_table(rows, args.kind))
    if args.out:
        write_csv(args.out, rows, (args.kind,) + METRICS)


if __name__ == "__main__":
    main()
