"""CLI: train on an exported manifest, predict confidence PFMs."""

from __future__ import annotations

import argparse
import logging
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvskit-train")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the confidence network")
    p.add_argument("manifest", help="manifest.json of an exported dataset")
    p.add_argument("--out", required=True, help="output directory for checkpoints/logs")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--crop", type=int, default=512)
    p.add_argument("--loss", choices=("balanced", "bce", "wbce"), default="balanced")
    p.add_argument("--fusion", choices=("middle", "early"), default="middle")
    p.add_argument("--seed", type=int, default=0)

    q = sub.add_parser("predict", help="write confidence PFMs for a dataset")
    q.add_argument("checkpoint", help="checkpoint .pt file")
    q.add_argument("manifest", help="manifest.json of the views to predict")
    q.add_argument("--out", required=True, help="output directory (e.g. workspace conf/)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train":
        from .train import TrainConfig, train

        result = train(
            args.manifest,
            args.out,
            TrainConfig(
                epochs=args.epochs,
                learning_rate=args.lr,
                batch_size=args.batch_size,
                crop=args.crop,
                loss=args.loss,
                fusion=args.fusion,
                seed=args.seed,
            ),
        )
        print(result["best"])
    else:
        from .predict import predict

        for path in predict(args.checkpoint, args.manifest, args.out):
            print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
