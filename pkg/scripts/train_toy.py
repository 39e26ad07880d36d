"""Train the toy model with the desk recipe and report held-out retrieval."""
import argparse

from cmlsp import experiments
from cmlsp.evalkit import summarize
from cmlsp.toytrain import epoch_means


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--parts", type=int, default=3)
    args = ap.parse_args()

    over = {"seed": args.seed, "parts": args.parts}
    if args.epochs is not None:
        over["epochs"] = args.epochs
    cfg = experiments.desk_config(**over)
    train_set, held_out = experiments.make_data(args.seed)
    rows, model = experiments.train_toy(cfg, train_set)
    losses = epoch_means(rows, len(train_set) // (2 * cfg.P * cfg.K))
    print(f"epoch loss: first {losses[0]:.3f}, last {losses[-1]:.3f}")

    banks = experiments.held_out_banks(model, held_out)
    for name, bank in (("global", banks.glo), ("enhanced", banks.eglo)):
        for mode in ("euclidean", "both"):
            m = summarize(experiments.cross_modal_eval(bank, mode=mode))
            print(f"{name:>8} {mode:>9}: " + "  ".join(f"{k} {v:.3f}" for k, v in m.items()))


if __name__ == "__main__":
    main()
