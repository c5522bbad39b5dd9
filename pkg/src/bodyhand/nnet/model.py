"""Dual-stream spatio-temporal graph network with expert and interactive branches.

Variants:
    B  expert-only: BE, HE
    E  expert + interactive: BI, HI, BE, HE
    P  interactive only, half width: BI, HI

Interactive branches exchange pooled features through a channel gate after every
block. Expert branches only ever read their own stream.
"""

from __future__ import annotations

import json
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..skeleton import build_body_topology, build_combined_topology, build_hand_topology, stream_joints
from .ops import (
    ConfigError,
    channel_linear,
    cross_attention_gate,
    global_pool,
    graph_conv,
    linear,
    normalized_adjacency,
    temporal_conv,
    temporal_pool,
)
from .tensor import Tensor, as_tensor

VARIANT_BRANCHES = {
    "B": ("BE", "HE"),
    "E": ("BI", "HI", "BE", "HE"),
    "P": ("BI", "HI"),
}
BODY_BRANCHES = ("BI", "BE")
INTERACTIVE = {"BI": "HI", "HI": "BI"}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "E"
    channels: tuple[int, ...] = (16, 32)
    blocks: int = 2
    class_count: int = 9
    attention_enabled: bool | None = None
    in_channels: int = 3
    kernel_size: int = 5
    # single-stream ("S") models only: which stream they read
    stream: str | None = None
    # multiplies (body, hand) inputs; fitted from training data by the harness
    input_scale: tuple[float, float] = (1.0, 1.0)
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "input_scale", tuple(float(s) for s in self.input_scale))
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.variant not in VARIANT_BRANCHES and self.variant != "S":
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.attention_enabled is None:
            object.__setattr__(self, "attention_enabled", self.variant in ("E", "P"))
        if self.blocks < 1 or len(self.channels) != self.blocks:
            raise ConfigError(f"blocks={self.blocks} needs {self.blocks} channel widths, got {self.channels}")
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if (self.variant == "S") != (self.stream in ("body", "hand")):
            raise ConfigError(f"stream={self.stream!r} is only valid (and required) for single-stream specs")

    @property
    def branches(self) -> tuple[str, ...]:
        return ("S",) if self.variant == "S" else VARIANT_BRANCHES[self.variant]

    def widths(self, branch: str) -> tuple[int, ...]:
        # P keeps interactive branches at half width
        if self.variant == "P" and branch in INTERACTIVE:
            return tuple(max(1, c // 2) for c in self.channels)
        return self.channels

    def gated(self, branch: str) -> bool:
        return bool(self.attention_enabled) and branch in INTERACTIVE

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["input_scale"] = list(self.input_scale)
        return d


def single_stream_spec(spec: ModelSpec, stream: str) -> ModelSpec:
    return replace(spec, variant="S", attention_enabled=False, stream=stream)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # per-name stream, so adding a parameter never shifts the others
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def branch_param_shapes(spec: ModelSpec, branch: str) -> "OrderedDict[str, tuple]":
    shapes = OrderedDict()
    c_in = spec.in_channels
    k = spec.kernel_size
    for i, c_out in enumerate(spec.widths(branch)):
        p = f"{branch}.block{i}"
        shapes[f"{p}.gcn.W"] = (c_in, c_out)
        shapes[f"{p}.tcn.K"] = (k, c_out, c_out)
        shapes[f"{p}.tcn.b"] = (c_out,)
        if c_in != c_out:
            shapes[f"{p}.res.W"] = (c_in, c_out)
        if spec.gated(branch):
            shapes[f"{p}.gate.W"] = (c_out, c_out)
        c_in = c_out
    shapes[f"{branch}.head.W"] = (c_in, spec.class_count)
    shapes[f"{branch}.head.b"] = (spec.class_count,)
    return shapes


def _init_value(seed: int, name: str, shape: tuple) -> np.ndarray:
    if name.endswith(".b"):
        return np.zeros(shape)
    rng = _param_rng(seed, name)
    if name.endswith("tcn.K"):
        k, ci, co = shape
        return _glorot(rng, shape, k * ci, k * co)
    return _glorot(rng, shape, shape[0], shape[1])


class ParamStore:
    """Named trainable tensors plus SGD velocity buffers."""

    def __init__(self, params: "OrderedDict[str, Tensor]", rng_seed: int):
        self.params = params
        self.rng_seed = rng_seed
        self.velocity: dict[str, np.ndarray] = {}

    @classmethod
    def init(cls, spec: ModelSpec, seed: int) -> "ParamStore":
        params = OrderedDict()
        for branch in spec.branches:
            for name, shape in branch_param_shapes(spec, branch).items():
                value = _init_value(seed, name, shape).astype(spec.dtype)
                params[name] = Tensor(value, requires_grad=True)
        return cls(params, seed)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        """Gradient per parameter; parameters untouched by the last backward get zeros."""
        return OrderedDict(
            (n, np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for n, p in self.params.items()
        )

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.params.items())

    def copy(self) -> "ParamStore":
        out = ParamStore(
            OrderedDict((n, Tensor(p.data.copy(), requires_grad=True)) for n, p in self.params.items()),
            self.rng_seed,
        )
        out.velocity = {n: v.copy() for n, v in self.velocity.items()}
        return out


def backward(loss: Tensor, params: ParamStore) -> "OrderedDict[str, np.ndarray]":
    params.zero_grad()
    loss.backward()
    return params.grads()


def sgd_step(params: ParamStore, grads, lr: float, momentum: float = 0.0) -> ParamStore:
    if not lr > 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    for name, g in grads.items():
        v = momentum * params.velocity.get(name, 0.0) + g
        params.velocity[name] = v
        params[name].data = params[name].data - lr * v
    return params


# --- adjacency lookup ---------------------------------------------------------


@lru_cache(maxsize=None)
def _default_adjacencies() -> dict[int, np.ndarray]:
    combined = build_combined_topology()
    _, hand_idx = stream_joints(combined)
    hand_stream = combined.subtopology(hand_idx, "hand_stream")
    out = {}
    for topo in (build_body_topology(), build_hand_topology(), hand_stream):
        out[topo.joint_count] = normalized_adjacency(topo).data
    return out


def default_adjacency(V: int, dtype: str = "float64") -> Tensor:
    try:
        return Tensor(_default_adjacencies()[V].astype(dtype))
    except KeyError:
        raise ConfigError(f"no default topology with {V} joints; pass an adjacency explicitly") from None


# --- forward -------------------------------------------------------------------


def _block(params: ParamStore, prefix: str, x: Tensor, adj: Tensor) -> Tensor:
    h = graph_conv(x, adj, params[f"{prefix}.gcn.W"])
    h = temporal_conv(h, params[f"{prefix}.tcn.K"]) + params[f"{prefix}.tcn.b"].reshape(1, -1, 1, 1)
    res = channel_linear(x, params[f"{prefix}.res.W"]) if f"{prefix}.res.W" in params else x
    return (h + res).relu()


def _head(params: ParamStore, branch: str, h: Tensor) -> Tensor:
    return linear(global_pool(h), params[f"{branch}.head.W"], params[f"{branch}.head.b"])


def _input(x, scale: float, dtype: str) -> Tensor:
    if isinstance(x, Tensor):
        return x * scale if scale != 1.0 else x
    return Tensor(np.asarray(x, dtype=dtype) * scale)


def _adj(adj, V: int, dtype: str) -> Tensor:
    return default_adjacency(V, dtype) if adj is None else as_tensor(adj)


def stream_forward(params: ParamStore, spec: ModelSpec, x, adj=None, branch: str = "S") -> Tensor:
    """Logits of one ungated branch reading ``x`` alone."""
    if branch == "S":
        x = _input(x, spec.input_scale[0 if spec.stream == "body" else 1], spec.dtype)
    x = as_tensor(x)
    adj = _adj(adj, x.shape[3], spec.dtype)
    h = x
    for i in range(spec.blocks):
        h = _block(params, f"{branch}.block{i}", h, adj)
        if i < spec.blocks - 1:
            h = temporal_pool(h)
    return _head(params, branch, h)


def forward(params: ParamStore, spec: ModelSpec, body, hand, body_adj=None, hand_adj=None) -> dict[str, Tensor]:
    """Branch logits, each [batch, K]. Returns exactly the branches of ``spec.variant``."""
    if spec.variant == "S":
        raise ConfigError("single-stream spec passed to the dual-stream forward")
    missing = [n for b in spec.branches for n in branch_param_shapes(spec, b) if n not in params]
    if missing:
        raise ConfigError(f"variant {spec.variant} needs parameters missing from the store: {missing[:3]}")
    body = _input(body, spec.input_scale[0], spec.dtype)
    hand = _input(hand, spec.input_scale[1], spec.dtype)
    if body.shape[:3] != hand.shape[:3]:
        raise ConfigError(f"body {body.shape} and hand {hand.shape} disagree on batch/channels/T")
    body_adj = _adj(body_adj, body.shape[3], spec.dtype)
    hand_adj = _adj(hand_adj, hand.shape[3], spec.dtype)

    logits = {}
    for branch in spec.branches:
        if branch in INTERACTIVE and spec.gated(branch):
            continue
        x, adj = (body, body_adj) if branch in BODY_BRANCHES else (hand, hand_adj)
        logits[branch] = stream_forward(params, spec, x, adj, branch)

    if spec.attention_enabled and "BI" in spec.branches:
        hb, hh = body, hand
        for i in range(spec.blocks):
            nb = _block(params, f"BI.block{i}", hb, body_adj)
            nh = _block(params, f"HI.block{i}", hh, hand_adj)
            hb = cross_attention_gate(nh, nb, params[f"BI.block{i}.gate.W"])
            hh = cross_attention_gate(nb, nh, params[f"HI.block{i}.gate.W"])
            if i < spec.blocks - 1:
                hb, hh = temporal_pool(hb), temporal_pool(hh)
        logits["BI"] = _head(params, "BI", hb)
        logits["HI"] = _head(params, "HI", hh)
    return {b: logits[b] for b in spec.branches}


# --- checkpoints -----------------------------------------------------------------


def checkpoint_dict(params: ParamStore, spec: ModelSpec) -> dict:
    return {
        "spec": spec.to_dict(),
        "seed": int(params.rng_seed),
        "params": {n: {"shape": list(p.shape), "values": p.data.ravel().tolist()} for n, p in params.items()},
    }


def save_checkpoint(path, params: ParamStore, spec: ModelSpec) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(params, spec)) + "\n")


def load_checkpoint(path) -> tuple[ParamStore, ModelSpec]:
    raw = json.loads(Path(path).read_text())
    raw["spec"]["channels"] = tuple(raw["spec"]["channels"])
    spec = ModelSpec(**raw["spec"])
    params = OrderedDict()
    for name, entry in raw["params"].items():
        values = np.asarray(entry["values"], dtype=spec.dtype)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            raise ConfigError(f"checkpoint parameter {name!r}: {values.size} values for shape {shape}")
        params[name] = Tensor(values.reshape(shape), requires_grad=True)
    return ParamStore(params, int(raw["seed"])), spec
