"""Centroid separation of enhanced vs plain global features across seeds."""
import argparse

import numpy as np

from cmlsp import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--epochs", type=int)
    args = ap.parse_args()

    ratios = []
    for seed in range(args.seeds):
        over = {"seed": seed} if args.epochs is None else {"seed": seed, "epochs": args.epochs}
        train_set, held_out = experiments.make_data(seed)
        _, model = experiments.train_toy(experiments.desk_config(**over), train_set)
        banks = experiments.held_out_banks(model, held_out)
        g = experiments.separation_ratio(banks.glo.vectors, banks.glo.identity)
        e = experiments.separation_ratio(banks.eglo.vectors, banks.eglo.identity)
        ratios.append(e / g)
        print(f"seed {seed}: global {g:.3f}  enhanced {e:.3f}  ratio {e / g:.4f}")
    print(f"median ratio {np.median(ratios):.4f}")


if __name__ == "__main__":
    main()
