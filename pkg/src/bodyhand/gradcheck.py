"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import fusion
from .nnet import ModelSpec, ParamStore, Tensor, einsum, forward, ops
from .nnet.model import default_adjacency
from .nnet.tensor import record_relu_masks

STEP = 1e-3
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor), element-wise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def _same_masks(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = STEP):
    """Central differences, perturbing ``x`` in place one entry at a time.

    Returns (gradient, smooth) where ``smooth[i]`` is False if the +-step stencil of
    entry i changed the on/off pattern of any relu, i.e. straddled a kink where the
    difference quotient is not an estimate of the derivative.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    smooth = np.ones(x.shape, dtype=bool)
    flat, g, sm = x.reshape(-1), grad.reshape(-1), smooth.reshape(-1)
    with record_relu_masks() as base:
        f()
    base = list(base)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        with record_relu_masks() as m_hi:
            hi = f()
        flat[i] = orig - step
        with record_relu_masks() as m_lo:
            lo = f()
        flat[i] = orig
        g[i] = (hi - lo) / (2 * step)
        sm[i] = _same_masks(base, m_hi) and _same_masks(base, m_lo)
    return grad, smooth


@dataclass
class CheckResult:
    error: float  # max relative error over smooth entries
    entries: int
    kinked: int  # entries skipped because the stencil crossed a relu kink


def check(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = STEP) -> list[CheckResult]:
    """Compare each tensor's analytic gradient of the scalar ``loss_fn()`` with central differences."""
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    results = []
    for t, a in zip(tensors, analytic):
        num, smooth = numeric_gradient(lambda: float(loss_fn().data), t.data, step)
        results.append(CheckResult(relative_error(a[smooth], num[smooth]), int(a.size), int((~smooth).sum())))
    return results


def _rand(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, shape))


def op_cases(rng: np.random.Generator) -> "OrderedDict[str, tuple]":
    """(loss closure, leaf tensors) for every differentiable primitive.

    Inputs of kinked or singular ops are kept away from the kink so that a step of
    1e-3 never straddles it.
    """
    cases: OrderedDict[str, tuple] = OrderedDict()
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    cases["add"] = (lambda: ((a + b) * w).sum(), [a, b])
    cases["sub"] = (lambda: ((a - b) * w).sum(), [a, b])
    cases["mul"] = (lambda: (a * b * w).sum(), [a, b])
    col = _rand(rng, 3, 1)
    cases["broadcast"] = (lambda: ((a * col + col) * w).sum(), [a, col])
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)))
    cases["div"] = (lambda: ((a / pos) * w).sum(), [a, pos])
    cases["exp"] = (lambda: (a.exp() * w).sum(), [a])
    cases["log"] = (lambda: (pos.log() * w).sum(), [pos])
    away = Tensor(rng.uniform(0.1, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)))
    cases["relu"] = (lambda: (away.relu() * w).sum(), [away])
    cases["sigmoid"] = (lambda: (a.sigmoid() * w).sum(), [a])
    cases["mean"] = (lambda: (a.mean(axis=1) * w[:, 0]).sum(), [a])
    wt = rng.normal(size=(3, 4))
    cases["reshape_transpose"] = (lambda: (a.reshape(4, 3).transpose(1, 0) * wt).sum(), [a])
    cases["getitem"] = (lambda: (a[np.array([0, 2, 0])] * w[:3]).sum(), [a])
    cases["log_softmax"] = (lambda: (a.log_softmax(axis=1) * w).sum(), [a])
    m = _rand(rng, 4, 5)
    we = rng.normal(size=(3, 5))
    cases["einsum"] = (lambda: (einsum("ij,jk->ik", a, m) * we).sum(), [a, m])

    n, c, d, T, V = 2, 3, 4, 6, 5
    x = _rand(rng, n, c, T, V)
    adj = _rand(rng, V, V, scale=0.5)
    W = _rand(rng, c, d)
    K = _rand(rng, 3, d, d, scale=0.5)
    Wg = _rand(rng, d, d)
    out_w = rng.normal(size=(n, d, T, V))
    cases["graph_conv"] = (lambda: (ops.graph_conv(x, adj, W) * out_w).sum(), [x, adj, W])
    y = _rand(rng, n, d, T, V)
    cases["temporal_conv"] = (lambda: (ops.temporal_conv(y, K) * out_w).sum(), [y, K])
    src = _rand(rng, n, d, 4, 3)
    cases["cross_attention_gate"] = (lambda: (ops.cross_attention_gate(src, y, Wg) * out_w).sum(), [src, y, Wg])
    pool_w = rng.normal(size=(n, d, T // 2, V))
    cases["temporal_pool"] = (lambda: (ops.temporal_pool(y) * pool_w).sum(), [y])
    hw = _rand(rng, d, 4)
    hb = _rand(rng, 4)
    lw = rng.normal(size=(n, 4))
    cases["global_pool_linear"] = (lambda: (ops.linear(ops.global_pool(y), hw, hb) * lw).sum(), [y, hw, hb])
    labels = np.array([1, 3])
    logits = _rand(rng, 2, 4)
    cases["softmax_cross_entropy"] = (lambda: fusion.softmax_cross_entropy(logits, labels), [logits])
    l1, l2 = _rand(rng, 2, 4), _rand(rng, 2, 4)
    cases["noisy_or_loss"] = (
        lambda: fusion.loss_noisy_or({"BE": l1, "HE": l2}, "B", labels), [l1, l2])
    return cases


def model_case(seed: int, variant: str = "E", class_count: int = 4, batch: int = 2, T: int = 8,
               channels=(4, 6)):
    """Full loss_total (all weights 1) of a small dual-stream model on real topologies."""
    rng = np.random.default_rng(seed)
    spec = ModelSpec(variant, channels, len(channels), class_count, kernel_size=3, dtype="float64")
    params = ParamStore.init(spec, seed)
    body = rng.normal(size=(batch, 3, T, 25))
    hand = rng.normal(size=(batch, 3, T, 21))
    body_adj = default_adjacency(25)
    hand_adj = default_adjacency(21)
    labels = rng.integers(0, class_count, batch)
    weights = fusion.LossWeights(1.0, 1.0, 1.0)

    def loss():
        logits = forward(params, spec, body, hand, body_adj, hand_adj)
        return fusion.loss_total(logits, variant, labels, weights)

    return loss, params


def run_gradcheck(seed: int = 0, step: float = STEP, include_model: bool = True) -> dict:
    """Checks every primitive and, optionally, the full variant-E loss w.r.t. all parameters.

    Returns {"ops": {name: CheckResult}, "model": {param: CheckResult}, "max_error",
    "checked", "kinked", "seconds", "passed"}.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    op_results = OrderedDict()
    for name, (fn, leaves) in op_cases(rng).items():
        parts = check(fn, leaves, step)
        op_results[name] = CheckResult(max(p.error for p in parts), sum(p.entries for p in parts),
                                       sum(p.kinked for p in parts))
    model_results = OrderedDict()
    if include_model:
        loss, params = model_case(seed)
        names = list(params)
        model_results.update(zip(names, check(loss, [params[n] for n in names], step)))
    everything = list(op_results.values()) + list(model_results.values())
    worst = max(r.error for r in everything)
    total = sum(r.entries for r in everything)
    kinked = sum(r.kinked for r in everything)
    return {
        "ops": op_results,
        "model": model_results,
        "max_error": worst,
        "checked": total - kinked,
        "kinked": kinked,
        "seconds": time.perf_counter() - start,
        "passed": worst < TOLERANCE,
    }
