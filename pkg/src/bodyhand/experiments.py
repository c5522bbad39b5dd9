"""End-to-end runs on the synthetic hand-centric benchmark."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

from . import harness
from .fusion import LossWeights
from .nnet import ModelSpec
from .preprocess import PreprocessConfig
from .skeleton import build_combined_topology
from .synthgen import SynthConfig, generate_dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkConfig:
    synth: SynthConfig = SynthConfig()
    preprocess: PreprocessConfig = PreprocessConfig()
    train: harness.TrainConfig = harness.TrainConfig()
    variant: str = "E"
    channels: tuple[int, ...] = (16, 32)
    kernel_size: int = 5
    dtype: str = "float32"
    weights: tuple[LossWeights, ...] = (LossWeights(),)
    rates: tuple[float, ...] = harness.DEFAULT_RATES
    drop_seeds: tuple[int, ...] = (0,)
    drop_scope: str = "all"


@dataclass
class BenchmarkResult:
    seed: int
    body_only: float
    hand_only: float
    dual: dict[str, float] = field(default_factory=dict)
    robustness: dict[str, harness.RobustnessReport] = field(default_factory=dict)
    reports: dict[str, harness.TrainReport] = field(default_factory=dict)
    seconds: float = 0.0


def weights_tag(w: LossWeights) -> str:
    return f"idv{w.lambda_idv:g}_cpl{w.lambda_cpl:g}_nor{w.lambda_nor:g}"


def load_data(cfg: BenchmarkConfig, seed: int):
    topo = build_combined_topology()
    synth = replace(cfg.synth, seed=seed)
    train = harness.preprocess_split(generate_dataset(synth, "train"), cfg.preprocess, topo)
    test = harness.preprocess_split(generate_dataset(synth, "test"), cfg.preprocess, topo)
    return topo, train, test


def run_benchmark(cfg: BenchmarkConfig, seed: int) -> BenchmarkResult:
    """Pretrain both streams once, then fine-tune one dual model per loss weighting."""
    start = time.perf_counter()
    topo, train, test = load_data(cfg, seed)
    tcfg = replace(cfg.train, seed=seed)
    spec = ModelSpec(cfg.variant, cfg.channels, len(cfg.channels), train.class_count,
                     kernel_size=cfg.kernel_size, dtype=cfg.dtype)
    arrays = harness.stream_arrays(train, topo, tcfg.modality)

    body, body_spec, body_rep = harness.pretrain_stream(train, "body", tcfg, spec, topo, arrays)
    hand, hand_spec, hand_rep = harness.pretrain_stream(train, "hand", tcfg, spec, topo, arrays)
    result = BenchmarkResult(
        seed=seed,
        body_only=harness.evaluate(body, body_spec, test, 0.0, 0, topo, tcfg.modality),
        hand_only=harness.evaluate(hand, hand_spec, test, 0.0, 0, topo, tcfg.modality),
        reports={"pretrain_body": body_rep, "pretrain_hand": hand_rep},
    )
    log.info("seed %d body-only %.3f hand-only %.3f", seed, result.body_only, result.hand_only)
    for w in cfg.weights:
        tag = weights_tag(w)
        params, dspec, rep = harness.finetune_dual(train, body, hand, spec, w, tcfg, topo, arrays)
        result.reports[tag] = rep
        rob = harness.robustness_sweep(params, dspec, test, topo, cfg.rates, cfg.drop_seeds,
                                       tcfg.modality, cfg.drop_scope, tcfg.threads)
        result.robustness[tag] = rob
        result.dual[tag] = rob.accuracy[float(cfg.rates[0])] if cfg.rates[0] == 0 else harness.evaluate(
            params, dspec, test, 0.0, 0, topo, tcfg.modality)
        log.info("seed %d %s accuracy %s", seed, tag, dict(rob.accuracy))
    result.seconds = time.perf_counter() - start
    return result
