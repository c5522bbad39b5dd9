"""Two-stage training, evaluation, frame-drop robustness and logit ensembles."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fusion
from .modality import Kind, as_sequence, modality_set
from .nnet import ConfigError, ModelSpec, ParamStore, Tensor, forward, sgd_step, single_stream_spec, stream_forward
from .nnet.model import TrainingError, backward, branch_param_shapes
from .preprocess import PreprocessConfig, run_pipeline
from .skeleton import DatasetSplit, GraphTopology, SkeletonError, SkeletonSequence, stream_joints, zero_masked

log = logging.getLogger(__name__)

STREAM_BRANCHES = {"body": ("BE", "BI"), "hand": ("HE", "HI")}
DEFAULT_RATES = (0.0, 0.25, 0.5)


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 30
    finetune_epochs: int = 20
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 8
    seed: int = 0
    modality: str = "J"
    threads: int = 1
    clip_norm: float | None = 5.0  # global gradient-norm cap; None disables


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    accuracy: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0
    seed: int = 0

    def write_csv(self, path) -> None:
        """Per-epoch losses; wall-clock time stays out so reruns are byte-identical."""
        cols = ["epoch", "L_idv", "L_cpl", "L_nor", "L_total"]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for row in self.epochs:
                w.writerow([row["epoch"]] + [repr(row[c]) if c in row else "" for c in cols[1:]])


@dataclass
class RobustnessReport:
    accuracy: "OrderedDict[float, float]"
    seeds: list[int]
    per_seed: dict[float, list[float]] = field(default_factory=dict)

    def degradation(self, lo: float = 0.0, hi: float = 0.5) -> float:
        return self.accuracy[lo] - self.accuracy[hi]

    def write_csv(self, path, series: str = "model") -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["series", "rate", "accuracy", "seeds"])
            for rate, acc in self.accuracy.items():
                w.writerow([series, repr(rate), repr(acc), len(self.seeds)])


# --- data ------------------------------------------------------------------------


def preprocess_split(split: DatasetSplit, pcfg: PreprocessConfig, topo: GraphTopology) -> DatasetSplit:
    return DatasetSplit([run_pipeline(s, pcfg, topo) for s in split.sequences], split.class_count, split.split_tag)


def modality_sequence(seq: SkeletonSequence, topo: GraphTopology, kind: str) -> SkeletonSequence:
    kind = Kind(kind)
    if kind is Kind.J:
        return seq
    return as_sequence(modality_set(seq, topo)[kind], seq)


def stream_arrays(split: DatasetSplit, topo: GraphTopology, kind: str = "J"):
    """Stack a split into body [N,3,T,Vb], hand [N,3,T,Vh] arrays and labels."""
    body_idx, hand_idx = stream_joints(topo)
    seqs = [modality_sequence(s, topo, kind) for s in split.sequences]
    data = np.stack([s.coords for s in seqs])
    return data[..., body_idx], data[..., hand_idx], split.labels


def frame_drop(seq: SkeletonSequence, rate: float, seed, scope: str = "all", topo: GraphTopology | None = None) -> SkeletonSequence:
    """Zero-mask ceil(rate*T) distinct, uniformly chosen frames."""
    if not 0 <= rate < 1:
        raise ValueError(f"drop rate must lie in [0, 1), got {rate}")
    n = math.ceil(rate * seq.T)
    if n == 0:
        return seq
    rng = np.random.default_rng(seed)
    frames = np.sort(rng.choice(seq.T, size=n, replace=False))
    valid = seq.valid.copy()
    if scope == "all":
        valid[frames] = False
    elif scope == "hand":
        if topo is None:
            raise ValueError("hand-scoped frame drop needs the topology")
        _, hand_idx = stream_joints(topo)
        valid[np.ix_(frames, hand_idx)] = False
    else:
        raise ValueError(f"unknown drop scope {scope!r}")
    return seq.with_data(zero_masked(seq.coords, valid), valid)


def drop_split(split: DatasetSplit, rate: float, seed: int, scope: str = "all", topo=None) -> DatasetSplit:
    if rate == 0:
        return split
    seqs = [frame_drop(s, rate, [seed, i], scope, topo) for i, s in enumerate(split.sequences)]
    return DatasetSplit(seqs, split.class_count, split.split_tag)


# --- training ----------------------------------------------------------------------


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _logits(params: ParamStore, spec: ModelSpec, body, hand) -> dict[str, Tensor]:
    if spec.variant == "S":
        x = body if spec.stream == "body" else hand
        return {"S": stream_forward(params, spec, x)}
    return forward(params, spec, body, hand)


def clip_gradients(grads: dict, max_norm: float | None) -> dict:
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grads
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if not math.isfinite(norm) or norm <= max_norm:
        return grads  # non-finite grads are reported by sgd_step
    scale = max_norm / norm
    return {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}


def _fit(params, spec, body, hand, labels, epochs, cfg: TrainConfig, loss_fn, seed_tag: int, report: TrainReport):
    rng = np.random.default_rng([cfg.seed, seed_tag])
    for epoch in range(epochs):
        sums: dict[str, float] = {}
        count = 0
        for idx in _batches(len(labels), cfg.batch_size, rng):
            terms = loss_fn(_logits(params, spec, body[idx], hand[idx]), labels[idx])
            total = terms["total"]
            if not np.isfinite(total.data).all():
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            grads = clip_gradients(backward(total, params), cfg.clip_norm)
            sgd_step(params, grads, cfg.lr, cfg.momentum)
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + float(v.data) * len(idx)
            count += len(idx)
        row = {"epoch": epoch}
        for k, col in (("idv", "L_idv"), ("cpl", "L_cpl"), ("nor", "L_nor"), ("total", "L_total")):
            if k in sums:
                row[col] = sums[k] / count
        report.epochs.append(row)
        log.info("epoch %d loss %.5f", epoch, row["L_total"])
    return params


def fit_input_scale(body: np.ndarray, hand: np.ndarray) -> tuple[float, float]:
    """Reciprocal RMS of the observed (non-zero) coordinates of each stream."""
    def one(a):
        nz = a[a != 0]
        return 1.0 if nz.size == 0 else float(1.0 / np.sqrt(np.mean(nz * nz)))
    return one(body), one(hand)


def pretrain_stream(split: DatasetSplit, stream: str, cfg: TrainConfig, spec: ModelSpec, topo: GraphTopology,
                    arrays=None) -> tuple[ParamStore, ModelSpec, TrainReport]:
    """Train one stream alone with plain softmax-CE."""
    if stream not in STREAM_BRANCHES:
        raise ConfigError(f"stream must be body or hand, got {stream!r}")
    if split is None or len(split) == 0:
        raise SkeletonError("cannot pretrain on an empty split")
    start = time.perf_counter()
    body, hand, labels = arrays if arrays is not None else stream_arrays(split, topo, cfg.modality)
    sspec = replace(single_stream_spec(spec, stream), input_scale=fit_input_scale(body, hand))
    params = ParamStore.init(sspec, cfg.seed)
    report = TrainReport(seed=cfg.seed)

    def loss_fn(logits, y):
        ce = fusion.softmax_cross_entropy(logits["S"], y)
        return {"idv": ce, "total": ce}

    _fit(params, sspec, body, hand, labels, cfg.pretrain_epochs, cfg, loss_fn, 1 if stream == "body" else 2, report)
    report.accuracy["train"] = float(np.mean(predict_arrays(params, sspec, body, hand, threads=cfg.threads) == labels))
    report.seconds = time.perf_counter() - start
    return params, sspec, report


def _transfer(src: np.ndarray, target_shape: tuple, name: str) -> np.ndarray:
    if src.ndim != len(target_shape):
        raise ConfigError(f"{name}: checkpoint rank {src.ndim} != model rank {len(target_shape)}")
    fixed = {"tcn.K": (0,), "head.W": (1,), "head.b": (0,)}
    keep = next((axes for suffix, axes in fixed.items() if name.endswith(suffix)), ())
    for axis, (have, want) in enumerate(zip(src.shape, target_shape)):
        if want > have or (axis in keep and want != have):
            raise ConfigError(f"{name}: checkpoint shape {src.shape} incompatible with {target_shape}")
    return src[tuple(slice(0, n) for n in target_shape)].copy()


def init_from_streams(spec: ModelSpec, body_ckpt: ParamStore, hand_ckpt: ParamStore, seed: int) -> ParamStore:
    """Dual-stream store whose branches start from the pretrained single streams.

    Narrower branches (variant P) take the leading channels. Gates start fresh.
    """
    params = ParamStore.init(spec, seed)
    for branch in spec.branches:
        ckpt = body_ckpt if branch in STREAM_BRANCHES["body"] else hand_ckpt
        for name, shape in branch_param_shapes(spec, branch).items():
            if ".gate." in name:
                continue
            src = "S" + name[len(branch):]
            if src not in ckpt:
                raise ConfigError(f"checkpoint has no parameter {src!r} for {name!r}")
            params[name].data = _transfer(ckpt[src].data, shape, name)
    return params


def finetune_dual(split: DatasetSplit, body_ckpt: ParamStore, hand_ckpt: ParamStore, spec: ModelSpec,
                  w: fusion.LossWeights, cfg: TrainConfig, topo: GraphTopology, arrays=None):
    start = time.perf_counter()
    body, hand, labels = arrays if arrays is not None else stream_arrays(split, topo, cfg.modality)
    spec = replace(spec, input_scale=fit_input_scale(body, hand))
    params = init_from_streams(spec, body_ckpt, hand_ckpt, cfg.seed)
    report = TrainReport(seed=cfg.seed)

    def loss_fn(logits, y):
        return fusion.loss_terms(logits, spec.variant, y, w)

    _fit(params, spec, body, hand, labels, cfg.finetune_epochs, cfg, loss_fn, 3, report)
    report.accuracy["train"] = float(np.mean(predict_arrays(params, spec, body, hand, threads=cfg.threads) == labels))
    report.seconds = time.perf_counter() - start
    return params, spec, report


# --- evaluation ----------------------------------------------------------------


def predict_arrays(params: ParamStore, spec: ModelSpec, body, hand, batch_size: int = 64, threads: int = 1) -> np.ndarray:
    chunks = [slice(i, i + batch_size) for i in range(0, len(body), batch_size)]

    def run(sl):
        return fusion.predict(_logits(params, spec, body[sl], hand[sl]))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))  # map keeps chunk order
    else:
        parts = [run(sl) for sl in chunks]
    return np.concatenate(parts)


def branch_logits(params: ParamStore, spec: ModelSpec, body, hand, batch_size: int = 64) -> dict[str, np.ndarray]:
    out: dict[str, list] = {}
    for i in range(0, len(body), batch_size):
        for k, v in _logits(params, spec, body[i:i + batch_size], hand[i:i + batch_size]).items():
            out.setdefault(k, []).append(v.data)
    return {k: np.concatenate(v) for k, v in out.items()}


def evaluate(params: ParamStore, spec: ModelSpec, split: DatasetSplit, drop_rate: float, seed: int,
             topo: GraphTopology, modality: str = "J", scope: str = "all", threads: int = 1) -> float:
    if not 0 <= drop_rate < 1:
        raise ValueError(f"drop rate must lie in [0, 1), got {drop_rate}")
    dropped = drop_split(split, drop_rate, seed, scope, topo)
    body, hand, labels = stream_arrays(dropped, topo, modality)
    pred = predict_arrays(params, spec, body, hand, threads=threads)
    return float(np.mean(pred == labels))


def robustness_sweep(params: ParamStore, spec: ModelSpec, split: DatasetSplit, topo: GraphTopology,
                     rates: Sequence[float] = DEFAULT_RATES, seeds: Sequence[int] = (0,), modality: str = "J",
                     scope: str = "all", threads: int = 1) -> RobustnessReport:
    per_seed = OrderedDict((float(r), []) for r in rates)
    for r in per_seed:
        for s in seeds:
            per_seed[r].append(evaluate(params, spec, split, r, s, topo, modality, scope, threads))
    acc = OrderedDict((r, float(np.mean(v))) for r, v in per_seed.items())
    return RobustnessReport(acc, list(seeds), dict(per_seed))


def metrics_report(predictions, labels, class_count: int) -> dict:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.size} predictions for {labels.size} labels")
    confusion = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    support = confusion.sum(axis=1)
    per_class = [float(confusion[k, k] / support[k]) if support[k] else None for k in range(class_count)]
    overall = float(np.trace(confusion) / labels.size) if labels.size else None
    return {"overall": overall, "per_class": per_class, "support": support.tolist(), "confusion": confusion.tolist()}


def write_metrics_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "support", "accuracy"])
        for k, (n, acc) in enumerate(zip(report["support"], report["per_class"])):
            w.writerow([k, n, "undefined" if acc is None else repr(acc)])
        w.writerow(["overall", sum(report["support"]), repr(report["overall"])])


# --- ensembles -----------------------------------------------------------------

ENSEMBLE_TAGS = ("J", "B", "JM", "BM", "RGB", "custom")


@dataclass(frozen=True)
class EnsembleEntry:
    tag: str
    weight: float
    source: str = ""


@dataclass(frozen=True)
class EnsembleSpec:
    entries: tuple[EnsembleEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("ensemble needs at least one entry")
        for e in self.entries:
            if e.tag not in ENSEMBLE_TAGS:
                raise ConfigError(f"unknown ensemble stream tag {e.tag!r}")
            if not math.isfinite(e.weight):
                raise ConfigError(f"non-finite weight for {e.tag}")

    @classmethod
    def parse(cls, text: str) -> "EnsembleSpec":
        """``J:2, B:2, JM:1, BM:1, RGB:3``"""
        entries = []
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            tag, _, weight = item.partition(":")
            try:
                entries.append(EnsembleEntry(tag.strip(), float(weight)))
            except ValueError:
                raise ConfigError(f"bad ensemble entry {item!r}") from None
        return cls(tuple(entries))

    @property
    def weights(self) -> list[float]:
        return [e.weight for e in self.entries]

    def scaled(self, scales: Sequence[float]) -> "EnsembleSpec":
        return EnsembleSpec(tuple(EnsembleEntry(e.tag, e.weight * s, e.source) for e, s in zip(self.entries, scales)))


INTRA_SKELETON = EnsembleSpec.parse("J:2, B:2, JM:1, BM:1")
FIVE_STREAM = EnsembleSpec.parse("J:2, B:2, JM:1, BM:1, RGB:3")


def ensemble_logits(spec: EnsembleSpec, logits: Sequence[np.ndarray]) -> np.ndarray:
    if len(logits) != len(spec.entries):
        raise ValueError(f"{len(spec.entries)} ensemble entries but {len(logits)} logit sets")
    arrays = [np.asarray(l, dtype=np.float64) for l in logits]
    shape = arrays[0].shape
    for e, a in zip(spec.entries, arrays):
        if a.shape != shape:
            raise ValueError(f"logits for {e.tag} have shape {a.shape}, expected {shape}")
    return fusion.order_free_sum([e.weight * a for e, a in zip(spec.entries, arrays)])


def weight_perturbation_sweep(spec: EnsembleSpec, logits, labels, scale_grid: Sequence[float] = (0.5, 1.0, 1.5)):
    """Accuracy for every per-entry combination of weight scales (full factorial)."""
    if any(not s > 0 for s in scale_grid):
        raise ValueError("scales must be positive")
    labels = np.asarray(labels)
    rows = []
    for scales in itertools.product(scale_grid, repeat=len(spec.entries)):
        pred = np.argmax(ensemble_logits(spec.scaled(scales), logits), axis=1)
        rows.append((tuple(scales), float(np.mean(pred == labels))))
    return rows


def write_sweep_csv(spec: EnsembleSpec, rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"scale_{e.tag}" for e in spec.entries] + ["accuracy"])
        for scales, acc in rows:
            w.writerow([repr(s) for s in scales] + [repr(acc)])
