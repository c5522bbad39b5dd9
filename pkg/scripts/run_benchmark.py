#!/usr/bin/env python3
"""Body-only, hand-only and dual-stream accuracy on the synthetic hand-centric benchmark."""

import argparse
import csv
import logging
from pathlib import Path

from bodyhand import harness
from bodyhand.experiments import BenchmarkConfig, run_benchmark, weights_tag
from bodyhand.fusion import LossWeights


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--variant", default="E", choices=("B", "E", "P"))
    p.add_argument("--pretrain-epochs", type=int, default=12)
    p.add_argument("--finetune-epochs", type=int, default=8)
    p.add_argument("--out", default="benchmark.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    w = LossWeights()
    cfg = BenchmarkConfig(train=harness.TrainConfig(args.pretrain_epochs, args.finetune_epochs),
                          variant=args.variant, weights=(w,), rates=(0.0,))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", "body_only", "hand_only", f"dual_{args.variant}", "seconds"])
        for seed in range(args.seeds):
            r = run_benchmark(cfg, seed)
            row = [seed, r.body_only, r.hand_only, r.dual[weights_tag(w)], round(r.seconds, 1)]
            writer.writerow(row)
            print("seed {} body-only {:.3f} hand-only {:.3f} dual {:.3f} ({:.0f} s)".format(*row))


if __name__ == "__main__":
    main()
