#!/usr/bin/env python3
"""Frame-drop robustness with and without the Noisy-OR loss, averaged over seeds."""

import argparse
import logging
from collections import OrderedDict
from pathlib import Path

import numpy as np

from bodyhand import harness
from bodyhand.experiments import BenchmarkConfig, run_benchmark, weights_tag
from bodyhand.fusion import LossWeights
from bodyhand.plots import emit_plots


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--rates", default="0,0.25,0.5")
    p.add_argument("--drop-seeds", type=int, default=1)
    p.add_argument("--drop-scope", default="all", choices=("all", "hand"))
    p.add_argument("--pretrain-epochs", type=int, default=12)
    p.add_argument("--finetune-epochs", type=int, default=8)
    p.add_argument("--out-dir", default="robustness")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    rates = tuple(float(r) for r in args.rates.split(","))
    weights = (LossWeights(1, 1, 0), LossWeights(1, 1, 1))
    cfg = BenchmarkConfig(train=harness.TrainConfig(args.pretrain_epochs, args.finetune_epochs), weights=weights,
                          rates=rates, drop_seeds=tuple(range(args.drop_seeds)), drop_scope=args.drop_scope)
    per_seed = {weights_tag(w): [] for w in weights}
    for seed in range(args.seeds):
        res = run_benchmark(cfg, seed)
        for tag, rep in res.robustness.items():
            per_seed[tag].append(rep)
            print(f"seed {seed} {tag}: " + ", ".join(f"{r:g}->{a:.3f}" for r, a in rep.accuracy.items()))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for tag, reps in per_seed.items():
        mean = OrderedDict((r, float(np.mean([rep.accuracy[r] for rep in reps]))) for r in rates)
        merged = harness.RobustnessReport(mean, list(range(args.seeds)))
        path = out_dir / f"{tag}.csv"
        merged.write_csv(path, tag)
        reports.append(path)
        print(f"{tag}: mean degradation {rates[0]:g}->{rates[-1]:g} = {mean[rates[0]] - mean[rates[-1]]:.4f}")
    emit_plots(reports, out_dir)


if __name__ == "__main__":
    main()
