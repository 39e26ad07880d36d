"""Command-line entry point.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments, formats
from .errors import CmlspError
from .evalkit import METRICS, RoleSplitter, concat_banks, pairwise_distances, protocol_run
from .losses import THERMAL, VISIBLE
from .rerank import EcnConfig, ecn_rerank
from .toytrain import LOG_COLUMNS, SynthDataset, TrainConfig, build_model, synth_dataset, train

log = logging.getLogger("cmlsp")

MODALITY_FILES = {VISIBLE: "visible", THERMAL: "thermal"}


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


# -- data helpers --------------------------------------------------------------

def save_dataset(out: Path, data: SynthDataset) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for mod, name in MODALITY_FILES.items():
        rows = np.flatnonzero(data.modality == mod)
        formats.save_bank(out / name, data.images[rows], data.identity[rows], data.modality[rows],
                          data.camera[rows], row_shape=data.shape)


def load_dataset(path: Path) -> SynthDataset:
    parts = []
    for name in MODALITY_FILES.values():
        images = formats.load_rows(path / name)
        identity, modality, camera = formats.read_labels(path / f"{name}.json")
        parts.append(SynthDataset(images, identity, modality, camera))
    return SynthDataset(*(np.concatenate([getattr(p, f) for p in parts])
                          for f in ("images", "identity", "modality", "camera")))


# -- subcommands -----------------------------------------------------------------

def cmd_synth(args):
    if args.ids < 2:
        args.parser.error("--ids must be at least 2")
    if args.per_id < 2:
        args.parser.error("--per-id must be at least 2")
    data = synth_dataset(args.ids, args.per_id, seed=args.seed, noise=args.noise, max_shift=args.max_shift)
    save_dataset(Path(args.out), data)
    print(f"wrote {len(data)} samples ({args.ids} ids) to {args.out}")


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_text(Path(args.config).read_text()) if args.config else TrainConfig()
    if args.desk:
        cfg = cfg.replace(**experiments.DESK_OVERRIDES)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    return cfg


def cmd_train(args):
    cfg = _load_config(args)
    data = load_dataset(Path(args.data))
    model = build_model(cfg, data.shape[0], data.num_ids)
    rows, model = train(model, data, cfg)
    formats.write_checkpoint(args.out_model, model, cfg)
    formats.write_csv(args.log, rows, LOG_COLUMNS)
    if rows:
        print(f"trained {len(rows)} steps; final total loss {rows[-1]['total']:.4f}")


def cmd_extract(args):
    model, _ = formats.read_checkpoint(args.model)
    data = load_dataset(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for mod, name in MODALITY_FILES.items():
        rows = np.flatnonzero(data.modality == mod)
        f = model.embed(data.images[rows], data.modality[rows])
        vectors = f.eglo if args.feature == "eglo" else f.glo
        formats.save_bank(out / name, vectors, data.identity[rows], data.modality[rows],
                          data.camera[rows], stripes=f.stripes)
    print(f"wrote {args.feature} banks to {out}")


def _mode(args) -> str:
    return "both" if args.use_align else "euclidean"


def cmd_eval(args):
    query = formats.load_bank(args.query)
    gallery = formats.load_bank(args.gallery)
    bank = concat_banks(query, gallery)
    mode = _mode(args)
    parts = args.parts if args.use_align and query.stripes is None else None

    def distance(a, b):
        return pairwise_distances(a, b, mode=mode, parts=parts, align_weight=args.align_weight)

    rerank = None
    if args.rerank:
        cfg = EcnConfig(args.top_t, args.expand_q)

        def rerank(dqg, dqq, dgg):
            return ecn_rerank(dqg, dqq, dgg, cfg)

    shots = args.gallery_shots or None
    res = protocol_run(bank, RoleSplitter(len(query), shots), repeats=args.repeats, seed=args.seed,
                       distance=distance, rerank=rerank, use_cameras=args.camera_filter)
    print(format_metric_table([{"split": "mean", **res.mean}, {"split": "std", **res.std}], "split"))
    if args.csv:
        formats.write_csv(args.csv, [{"stat": "mean", **res.mean}, {"stat": "std", **res.std}],
                          ("stat",) + METRICS)


def cmd_align(args):
    a = formats.load_bank(args.query)
    b = formats.load_bank(args.gallery)
    d = pairwise_distances(a, b, mode="align", parts=args.parts if a.stripes is None else None)
    if args.out:
        formats.write_feature_bank(args.out, d)
    same = a.identity[:, None] == b.identity[None, :]
    print(f"alignment distances {d.shape[0]}x{d.shape[1]}: "
          f"same-identity mean {d[same].mean():.4f}, cross-identity mean {d[~same].mean():.4f}")


def cmd_rerank(args):
    q = formats.load_bank(args.query)
    g = formats.load_bank(args.gallery)
    d = ecn_rerank(pairwise_distances(q, g), pairwise_distances(q, q), pairwise_distances(g, g),
                   EcnConfig(args.top_t, args.expand_q))
    formats.write_feature_bank(args.out, d)
    print(f"wrote re-ranked {d.shape[0]}x{d.shape[1]} distance matrix to {args.out}")


def parse_sweep(text: str) -> tuple[str, list[int]]:
    """``parts=1..9`` or ``dim=128,256`` -> (kind, values)."""
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"sweep must look like parts=1..9 or dim=128,256, got {text!r}")
    kind, spec = text.split("=", 1)
    if kind not in ("parts", "dim"):
        raise argparse.ArgumentTypeError(f"unknown sweep key {kind!r}")
    try:
        if ".." in spec:
            lo, hi = spec.split("..")
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) for v in spec.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sweep values {spec!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("sweep values must be positive")
    return kind, values


def cmd_ablate(args):
    kind, values = args.sweep
    rows = experiments.ablation(kind, values, seed=args.seed, use_align=not args.no_align, epochs=args.epochs)
    print(format_metric_table(rows, kind))
    if args.out:
        formats.write_csv(args.out, rows, (kind,) + METRICS)


def format_metric_table(rows, key) -> str:
    head = f"{key:>8} " + " ".join(f"{m:>8}" for m in METRICS)
    lines = [head]
    for r in rows:
        lines.append(f"{str(r[key]):>8} " + " ".join(f"{r[m]:8.3f}" for m in METRICS))
    return "\n".join(lines)


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmlsp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic bimodal dataset")
    s.add_argument("--ids", type=int, default=20)
    s.add_argument("--per-id", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.3)
    s.add_argument("--max-shift", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the toy two-stream model")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="key=value config file")
    s.add_argument("--desk", action="store_true", help="apply the desk-scale learning-rate recipe")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out-model", required=True)
    s.add_argument("--log", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", help="write embedding banks from a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--feature", choices=("eglo", "glo"), default="eglo")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    def retrieval_flags(s):
        s.add_argument("--query", required=True, help="bank prefix")
        s.add_argument("--gallery", required=True, help="bank prefix")
        s.add_argument("--parts", type=_positive, default=3)

    def ecn_flags(s):
        s.add_argument("--top-t", type=_positive, default=3)
        s.add_argument("--expand-q", type=int, default=8)

    s = sub.add_parser("eval", help="CMC / mAP / mINP over repeated random gallery splits")
    retrieval_flags(s)
    ecn_flags(s)
    s.add_argument("--use-align", action="store_true", help="add the stripe alignment distance")
    s.add_argument("--align-weight", type=float, default=1.0)
    s.add_argument("--rerank", action="store_true", help="apply ECN re-ranking")
    s.add_argument("--repeats", type=_positive, default=10)
    s.add_argument("--gallery-shots", type=int, default=1, help="gallery samples per identity; 0 = all")
    s.add_argument("--camera-filter", action="store_true", help="drop same-camera true matches")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("align", help="pairwise stripe alignment distances")
    retrieval_flags(s)
    s.add_argument("--out", help="write the distance matrix as a feature bank file")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("rerank", help="ECN re-rank Euclidean distances")
    retrieval_flags(s)
    ecn_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rerank)

    s = sub.add_parser("ablate", help="part-count or local-dimension sweep on synthetic data")
    s.add_argument("--sweep", type=parse_sweep, default=("parts", list(experiments.PARTS_GRID)))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--no-align", action="store_true", help="rank by global features only")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.parser = parser
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CmlspError, OSError, ValueError) as e:
        print(f"cmlsp {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
