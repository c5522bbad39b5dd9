#!/usr/bin/env python3
"""Train one dual-stream model per skeleton modality, ensemble their logits and sweep the weights."""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from bodyhand import harness
from bodyhand.experiments import BenchmarkConfig, load_data
from bodyhand.fusion import LossWeights
from bodyhand.nnet import ModelSpec
from bodyhand.plots import emit_plots


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", default="J:2, B:2, JM:1, BM:1")
    p.add_argument("--scales", default="0.5,1,1.5")
    p.add_argument("--pretrain-epochs", type=int, default=12)
    p.add_argument("--finetune-epochs", type=int, default=8)
    p.add_argument("--out-dir", default="sweep")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    spec = harness.EnsembleSpec.parse(args.spec)
    cfg = BenchmarkConfig(train=harness.TrainConfig(args.pretrain_epochs, args.finetune_epochs, seed=args.seed))
    topo, train, test = load_data(cfg, args.seed)
    model = ModelSpec(cfg.variant, cfg.channels, len(cfg.channels), train.class_count,
                      kernel_size=cfg.kernel_size, dtype=cfg.dtype)
    logits = []
    for entry in spec.entries:
        tcfg = replace(cfg.train, modality=entry.tag)
        body, hand = (harness.pretrain_stream(train, s, tcfg, model, topo)[0] for s in ("body", "hand"))
        params, dspec, _ = harness.finetune_dual(train, body, hand, model, LossWeights(), tcfg, topo)
        b, h, labels = harness.stream_arrays(test, topo, entry.tag)
        out = harness.branch_logits(params, dspec, b, h)
        logits.append(sum(out[k] for k in sorted(out)))
        print(f"{entry.tag}: accuracy {np.mean(np.argmax(logits[-1], 1) == labels):.3f}")

    fused = harness.ensemble_logits(spec, logits)
    print(f"ensemble {args.spec}: accuracy {np.mean(np.argmax(fused, 1) == labels):.3f}")
    scales = [float(s) for s in args.scales.split(",")]
    rows = harness.weight_perturbation_sweep(spec, logits, labels, scales)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "weight_sweep.csv"
    harness.write_sweep_csv(spec, rows, path)
    accs = [a for _, a in rows]
    print(f"sweep over {len(rows)} weightings: accuracy {min(accs):.3f} .. {max(accs):.3f}")
    emit_plots([path], out_dir)


if __name__ == "__main__":
    main()
