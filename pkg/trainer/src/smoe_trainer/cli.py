"""Trainer CLI: run a training config, export weights and fixtures."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .train import TrainConfig, train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="smoe-train", description="Train the block encoder")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--dataset", help="override dataset_root")
    parser.add_argument("--out-dir", help="override out_dir")
    parser.add_argument("--resume", action="store_true")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        config = load_config(args.config) if args.config else TrainConfig()
        if args.dataset:
            config.dataset_root = args.dataset
        if args.out_dir:
            config.out_dir = args.out_dir
        if args.resume:
            config.resume = True
        report = train(config)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    for epoch, (tr, va) in enumerate(zip(report.train_mse, report.val_mse), 1):
        print(f"epoch {epoch}: train_mse: {tr:.6e} val_mse: {va:.6e}")
    print(f"wall_seconds: {report.wall_seconds:.3f}")
    print(f"weights: {report.weights_path}")
    print(f"fixtures: {report.fixtures_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
