"""``bodyhand`` command-line entry point.

Every written artifact gets a sibling ``<artifact>.manifest.json`` holding the input
file hashes, the resolved config and its hash, the seed and library versions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, harness
from .fusion import LossWeights, predict
from .gradcheck import TOLERANCE, run_gradcheck
from .modality import Kind, as_sequence, modality_set
from .nnet import ConfigError, ModelSpec, load_checkpoint, save_checkpoint
from .nnet.model import TrainingError
from .plots import ReportError, emit_plots
from .preprocess import Centering, PreprocessConfig, run_pipeline
from .skeleton import DatasetSplit, SkeletonError, get_topology, read_jsonl, write_jsonl
from .synthgen import SynthConfig, generate_dataset

log = logging.getLogger("bodyhand")

THREADS_ENV = "BHARNET_THREADS"


class UsageError(Exception):
    """Bad flags or config: exit status 2."""


# --- config -----------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    # synth
    body_motifs: int = 3
    hand_motifs: int = 3
    samples_per_class: int = 40
    T: int = 64
    sigma_body: float = 0.005
    sigma_hand: float = 0.03
    hand_dropout_rate: float = 0.1
    jitter: float = 0.15
    # preprocess
    target_length: int = 64
    max_gap: int = 5
    centering: str = "hand_wrist"
    canonical: bool = False
    # model
    variant: str = "E"
    channels: tuple = (16, 32)
    kernel_size: int = 5
    dtype: str = "float32"
    # training
    pretrain_epochs: int = 30
    finetune_epochs: int = 20
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 8
    clip_norm: float = 5.0
    modality: str = "J"
    threads: int = 1
    # loss weights
    lambda_idv: float = 1.0
    lambda_cpl: float = 1.0
    lambda_nor: float = 1.0
    # evaluation and ensembles
    drop_scope: str = "all"
    ensemble: str = "J:2, B:2, JM:1, BM:1"
    # paths
    train_data: str = ""
    test_data: str = ""
    out_dir: str = "runs"
    body_ckpt: str = ""
    hand_ckpt: str = ""

    def synth(self) -> SynthConfig:
        return SynthConfig(self.body_motifs, self.hand_motifs, self.samples_per_class, self.T, self.sigma_body,
                           self.sigma_hand, self.hand_dropout_rate, self.seed, self.jitter)

    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(self.target_length, self.max_gap, Centering(self.centering), self.canonical)

    def train(self) -> harness.TrainConfig:
        return harness.TrainConfig(self.pretrain_epochs, self.finetune_epochs, self.lr, self.momentum,
                                   self.batch_size, self.seed, self.modality, self.threads,
                                   None if self.clip_norm <= 0 else self.clip_norm)

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_idv, self.lambda_cpl, self.lambda_nor)

    def model(self, class_count: int, variant: str | None = None) -> ModelSpec:
        return ModelSpec(variant or self.variant, tuple(self.channels), len(self.channels), class_count,
                         kernel_size=self.kernel_size, dtype=self.dtype)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


REQUIRED = {"train": ("train_data",)}
_BOOL = {"on": True, "true": True, "yes": True, "1": True, "off": False, "false": False, "no": False, "0": False}


def _convert(key: str, default, text: str):
    try:
        if isinstance(default, bool):
            return _BOOL[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.split(",") if x.strip())
        return text
    except (KeyError, ValueError):
        raise UsageError(f"config key {key!r}: cannot parse {text!r}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """``key = value`` per line, ``#`` starts a comment; unknown keys are rejected."""
    base = base or ExperimentConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(base)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        if key not in defaults:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        if key in updates:
            raise UsageError(f"config line {lineno}: duplicate key {key!r}")
        updates[key] = _convert(key, defaults[key], value)
    return replace(base, **updates)


def load_config(path: str | None, command: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        cfg = parse_config(p.read_text(), cfg)
    env = os.environ.get(THREADS_ENV)
    if env:
        cfg = replace(cfg, threads=_convert("threads", 1, env))
    if cfg.threads < 1:
        raise UsageError("threads must be >= 1")
    try:  # surface bad values as config errors before any work starts
        cfg.synth(), cfg.preprocess(), cfg.train(), cfg.weights(), cfg.model(2)
        harness.EnsembleSpec.parse(cfg.ensemble)
        Kind(cfg.modality)
    except (ValueError, ConfigError) as e:
        raise UsageError(str(e)) from None
    if cfg.drop_scope not in ("all", "hand"):
        raise UsageError(f"drop_scope must be all or hand, got {cfg.drop_scope!r}")
    missing = [k for k in REQUIRED.get(command, ()) if not getattr(cfg, k)]
    if missing:
        raise UsageError(f"{command} needs config keys {missing}")
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.as_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --- artifacts --------------------------------------------------------------------


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    import matplotlib

    return {"bodyhand": __version__, "numpy": np.__version__, "matplotlib": matplotlib.__version__,
            "python": platform.python_version()}


def write_manifest(artifact, command: str, inputs: Sequence, cfg: ExperimentConfig | None, seed: int | None,
                   extra: dict | None = None) -> Path:
    artifact = Path(artifact)
    manifest = {
        "artifact": artifact.name,
        "command": command,
        "inputs": [{"path": str(p), "sha256": file_digest(p)} for p in inputs],
        "config": cfg.as_dict() if cfg else None,
        "config_hash": config_hash(cfg) if cfg else None,
        "seed": seed,
        "versions": versions(),
    }
    if extra:
        manifest.update(extra)
    path = artifact.with_name(artifact.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _read_split(path, split_tag: str) -> DatasetSplit:
    if not Path(path).is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    seqs = read_jsonl(path)
    if not seqs:
        raise SkeletonError(f"{path} holds no sequences")
    return DatasetSplit(seqs, 1 + max(s.label for s in seqs), split_tag)


def write_logits_jsonl(path, ids, logits: np.ndarray, labels=None) -> None:
    with open(path, "w") as f:
        for i, sid in enumerate(ids):
            rec = {"id": sid, "logits": [float(x) for x in logits[i]]}
            if labels is not None:
                rec["label"] = int(labels[i])
            f.write(json.dumps(rec) + "\n")


def read_logits_jsonl(path) -> tuple[list[str], np.ndarray, np.ndarray | None]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"logits file not found: {path}")
    ids, rows, labels = [], [], []
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            ids.append(str(rec["id"]))
            rows.append([float(x) for x in rec["logits"]])
        except (ValueError, KeyError, TypeError) as e:
            raise ValueError(f"{path}:{lineno}: bad logits record ({e})") from None
        labels.append(rec.get("label"))
    if len({len(r) for r in rows}) > 1:
        raise ValueError(f"{path}: rows disagree on class count")
    lab = None if any(x is None for x in labels) else np.asarray(labels, dtype=np.int64)
    return ids, np.asarray(rows, dtype=np.float64), lab


# --- subcommands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_config(args.config, "synth")
    split = generate_dataset(cfg.synth(), args.split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, split.sequences)
    write_manifest(out, "synth", [args.config] if args.config else [], cfg, cfg.seed, {"split": args.split})
    log.info("wrote %d sequences to %s", len(split), out)
    return 0


def cmd_preprocess(args) -> int:
    cfg = load_config(args.config, "preprocess")
    overrides = {"target_length": args.target_length, "max_gap": args.max_gap, "centering": args.centering}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if args.canonical is not None:
        cfg = replace(cfg, canonical=args.canonical == "on")
    pcfg = cfg.preprocess()
    seqs = read_jsonl(args.inp)
    out_seqs = [run_pipeline(s, pcfg, get_topology(s.topology_name)) for s in seqs]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, out_seqs)
    write_manifest(out, "preprocess", [args.inp] + ([args.config] if args.config else []), cfg, None)
    return 0


def cmd_modality(args) -> int:
    seqs = read_jsonl(args.inp)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    derived = {k: [] for k in Kind}
    for s in seqs:
        for kind, m in modality_set(s, get_topology(s.topology_name)).items():
            derived[kind].append(as_sequence(m, s))
    for kind, items in derived.items():
        path = out_dir / f"{kind.value}.jsonl"
        write_jsonl(path, items)
        write_manifest(path, "modality", [args.inp], None, None, {"kind": kind.value})
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, "train")
    if args.variant:
        cfg = replace(cfg, variant=args.variant)
    topo = get_topology("combined")
    split = harness.preprocess_split(_read_split(cfg.train_data, "train"), cfg.preprocess(), topo)
    tcfg = cfg.train()
    spec = cfg.model(split.class_count)
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [args.config, cfg.train_data]
    if args.stage == "pretrain":
        if not args.stream:
            raise UsageError("--stream is required for --stage pretrain")
        params, out_spec, report = harness.pretrain_stream(split, args.stream, tcfg, spec, topo)
        stem = f"pretrain_{args.stream}"
    else:
        body_path = args.body_ckpt or cfg.body_ckpt or str(out_dir / "pretrain_body.json")
        hand_path = args.hand_ckpt or cfg.hand_ckpt or str(out_dir / "pretrain_hand.json")
        body, _ = load_checkpoint(body_path)
        hand, _ = load_checkpoint(hand_path)
        params, out_spec, report = harness.finetune_dual(split, body, hand, spec, cfg.weights(), tcfg, topo)
        stem = f"finetune_{cfg.variant}"
        inputs += [body_path, hand_path]
    ckpt, rep = out_dir / f"{stem}.json", out_dir / f"{stem}_losses.csv"
    save_checkpoint(ckpt, params, out_spec)
    report.write_csv(rep)
    for artifact in (ckpt, rep):
        write_manifest(artifact, f"train --stage {args.stage}", inputs, cfg, cfg.seed)
    log.info("train accuracy %.4f, wrote %s", report.accuracy.get("train", float("nan")), ckpt)
    return 0


def _eval_inputs(args, command: str):
    cfg = load_config(args.config, command)
    data = args.data or cfg.test_data
    if not data:
        raise UsageError(f"{command} needs --data or the test_data config key")
    if args.drop_scope:
        cfg = replace(cfg, drop_scope=args.drop_scope)
    topo = get_topology("combined")
    params, spec = load_checkpoint(args.ckpt)
    split = harness.preprocess_split(_read_split(data, "test"), cfg.preprocess(), topo)
    if split.class_count > spec.class_count:
        raise SkeletonError(f"{data} has labels beyond the checkpoint's {spec.class_count} classes")
    split = DatasetSplit(split.sequences, spec.class_count, split.split_tag)
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [args.ckpt, data] + ([args.config] if args.config else [])
    return cfg, topo, params, spec, split, out_dir, inputs


def cmd_eval(args) -> int:
    cfg, topo, params, spec, split, out_dir, inputs = _eval_inputs(args, "eval")
    if not 0 <= args.drop_rate < 1:
        raise UsageError(f"--drop-rate must lie in [0, 1), got {args.drop_rate}")
    dropped = harness.drop_split(split, args.drop_rate, args.seed, cfg.drop_scope, topo)
    body, hand, labels = harness.stream_arrays(dropped, topo, cfg.modality)
    logits = harness.branch_logits(params, spec, body, hand)
    pred = predict(logits)
    summed = sum(logits[k] for k in sorted(logits))
    stem = Path(args.ckpt).stem + f"_eval_r{args.drop_rate:g}_s{args.seed}"
    metrics, logit_path = out_dir / f"{stem}_metrics.csv", out_dir / f"{stem}_logits.jsonl"
    report = harness.metrics_report(pred, labels, spec.class_count)
    harness.write_metrics_csv(report, metrics)
    write_logits_jsonl(logit_path, [s.id for s in split.sequences], summed, labels)
    for artifact in (metrics, logit_path):
        write_manifest(artifact, "eval", inputs, cfg, args.seed, {"drop_rate": args.drop_rate})
    print(f"accuracy = {report['overall']!r}")
    return 0


def cmd_robustness(args) -> int:
    cfg, topo, params, spec, split, out_dir, inputs = _eval_inputs(args, "robustness")
    try:
        rates = tuple(float(r) for r in args.rates.split(","))
    except ValueError:
        raise UsageError(f"bad --rates {args.rates!r}") from None
    if args.seeds < 1 or any(not 0 <= r < 1 for r in rates):
        raise UsageError("--seeds must be >= 1 and every rate in [0, 1)")
    rep = harness.robustness_sweep(params, spec, split, topo, rates, list(range(args.seeds)), cfg.modality,
                                   cfg.drop_scope, cfg.threads)
    path = out_dir / f"{Path(args.ckpt).stem}_robustness.csv"
    rep.write_csv(path, args.series or Path(args.ckpt).stem)
    write_manifest(path, "robustness", inputs, cfg, None, {"rates": list(rates), "seeds": args.seeds})
    for r, a in rep.accuracy.items():
        print(f"rate {r:g}: accuracy = {a!r}")
    return 0


def _read_ensemble_spec(path) -> harness.EnsembleSpec:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"ensemble spec not found: {path}")
    items = []
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, sep, weight = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'tag = weight'")
        items.append(f"{tag.strip()}:{weight.strip()}")
    return harness.EnsembleSpec.parse(", ".join(items))


def cmd_ensemble(args) -> int:
    spec = _read_ensemble_spec(args.spec)
    if len(args.logits) != len(spec.entries):
        raise UsageError(f"{len(spec.entries)} ensemble entries but {len(args.logits)} logits files")
    loaded = [read_logits_jsonl(p) for p in args.logits]
    ids0, first, labels = loaded[0]
    for path, (ids, arr, _), entry in zip(args.logits, loaded, spec.entries):
        if arr.shape != first.shape:
            raise ValueError(f"{path} ({entry.tag}): logits shape {arr.shape} differs from {first.shape}")
        if ids != ids0:
            raise ValueError(f"{path} ({entry.tag}): sample ids differ from {args.logits[0]}")
    arrays = [arr for _, arr, _ in loaded]
    fused = harness.ensemble_logits(spec, arrays)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / "ensemble_logits.jsonl"
    write_logits_jsonl(out, ids0, fused, labels)
    inputs = [args.spec] + list(args.logits)
    write_manifest(out, "ensemble", inputs, None, None, {"weights": spec.weights})
    if labels is not None:
        acc = float(np.mean(np.argmax(fused, axis=1) == labels))
        print(f"accuracy = {acc!r}")
        if args.sweep:
            sweep = out_dir / "ensemble_sweep.csv"
            harness.write_sweep_csv(spec, harness.weight_perturbation_sweep(spec, arrays, labels), sweep)
            write_manifest(sweep, "ensemble --sweep", inputs, None, None, {"weights": spec.weights})
    elif args.sweep:
        raise UsageError("--sweep needs labels in the logits files")
    return 0


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"gradcheck_seed{args.seed}.txt"
    lines = [f"max_relative_error = {result['max_error']:.3e}", f"tolerance = {TOLERANCE:g}",
             f"entries_checked = {result['checked']}", f"entries_on_relu_kinks = {result['kinked']}",
             f"passed = {result['passed']}"]
    for group in ("ops", "model"):
        for name, r in result[group].items():
            lines.append(f"{group}.{name} = {r.error:.3e} ({r.entries} entries, {r.kinked} on kinks)")
    path.write_text("\n".join(lines) + "\n")
    write_manifest(path, "gradcheck", [], None, args.seed)
    print("\n".join(lines[:5]))
    return 0 if result["passed"] else 1


def cmd_plot(args) -> int:
    written = emit_plots(args.reports, args.out_dir)
    for p in written:
        write_manifest(p, "plot", args.reports, None, None)
    return 0


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bodyhand", description="Body-hand skeleton action recognition toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic hand-centric dataset split")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="run the preprocessing pipeline over a JSONL file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--target-length", type=int)
    p.add_argument("--max-gap", type=int)
    p.add_argument("--centering", choices=[c.value for c in Centering])
    p.add_argument("--canonical", choices=("on", "off"))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("modality", help="derive J, B, JM and BM files")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_modality)

    p = sub.add_parser("train", help="pretrain one stream or fine-tune the dual-stream model")
    p.add_argument("--stage", required=True, choices=("pretrain", "finetune"))
    p.add_argument("--stream", choices=("body", "hand"))
    p.add_argument("--variant", choices=("B", "E", "P"))
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--body-ckpt")
    p.add_argument("--hand-ckpt")
    p.set_defaults(func=cmd_train)

    for name, helptext in (("eval", "evaluate a checkpoint, optionally with frame drop"),
                           ("robustness", "accuracy across frame-drop rates")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--config")
        p.add_argument("--data", help="test JSONL (defaults to the test_data config key)")
        p.add_argument("--drop-scope", choices=("all", "hand"))
        p.add_argument("--out-dir")
        if name == "eval":
            p.add_argument("--drop-rate", type=float, default=0.0)
            p.add_argument("--seed", type=int, default=0)
            p.set_defaults(func=cmd_eval)
        else:
            p.add_argument("--rates", default="0,0.25,0.5")
            p.add_argument("--seeds", type=int, default=1, help="number of drop seeds (0..N-1)")
            p.add_argument("--series", help="series name in the report")
            p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("ensemble", help="weighted logit-sum ensemble of logits files")
    p.add_argument("--spec", required=True, help="file with one 'tag = weight' line per stream")
    p.add_argument("--logits", required=True, nargs="+")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--sweep", action="store_true", help="also run the per-entry 0.5/1/1.5 weight sweep")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="render robustness / sweep reports as SVG + CSV")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_plot)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors and 0 on --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"bodyhand {args.command}: config error: {e}", file=sys.stderr)
        return 2
    except (ReportError, SkeletonError, TrainingError, FileNotFoundError, ValueError, OSError) as e:
        print(f"bodyhand {args.command}: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
