"""Plain vs ECN re-ranked mAP on noisy Gaussian clusters."""
import argparse

from cmlsp import experiments
from cmlsp.rerank import EcnConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--noise", type=float, default=0.6)
    ap.add_argument("--top-t", type=int, default=3)
    ap.add_argument("--expand-q", type=int, default=8)
    args = ap.parse_args()

    cfg = EcnConfig(args.top_t, args.expand_q)
    wins = 0
    for seed in range(args.trials):
        plain, reranked = experiments.ecn_trial(seed, cfg, noise=args.noise)
        wins += reranked >= plain
        print(f"seed {seed}: plain mAP {plain:.3f}  re-ranked {reranked:.3f}")
    print(f"re-ranking matched or beat plain in {wins}/{args.trials} trials")


if __name__ == "__main__":
    main()
