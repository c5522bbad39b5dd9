"""Graph, temporal and gating layers over [batch, C, T, V] tensors."""

from __future__ import annotations

import numpy as np

from ..skeleton import GraphTopology
from .tensor import Tensor, as_tensor, einsum


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def normalized_adjacency(topo: GraphTopology) -> Tensor:
    """D^-1/2 (A + I) D^-1/2 with the symmetric adjacency of ``topo``."""
    a = topo.adjacency() + np.eye(topo.joint_count)
    d = a.sum(axis=1)
    # one square root per entry keeps e.g. 1/sqrt(2*2) exact
    return Tensor(a / np.sqrt(d[:, None] * d[None, :]))


def graph_conv(x: Tensor, adj: Tensor, W: Tensor) -> Tensor:
    """Aggregate over neighbours with ``adj`` then mix channels with ``W``: [n,c,t,v] -> [n,d,t,v]."""
    x, adj, W = as_tensor(x), as_tensor(adj), as_tensor(W)
    if x.ndim != 4 or adj.shape != (x.shape[3], x.shape[3]) or W.ndim != 2 or W.shape[0] != x.shape[1]:
        raise ShapeError(f"graph_conv: x {x.shape}, adj {adj.shape}, W {W.shape}")
    n, c, T, v = x.shape
    d = W.shape[1]
    xa = (x.data.reshape(-1, v) @ adj.data).reshape(n, c, T * v)
    val = np.matmul(W.data.T, xa).reshape(n, d, T, v)

    def backward(out):
        g = out.grad.reshape(n, d, T * v)
        if W.requires_grad:
            W._accumulate(np.tensordot(xa, g, axes=([0, 2], [0, 2])))
        if x.requires_grad or adj.requires_grad:
            gxa = np.matmul(W.data, g).reshape(-1, v)
            if x.requires_grad:
                x._accumulate((gxa @ adj.data.T).reshape(n, c, T, v))
            if adj.requires_grad:
                adj._accumulate(x.data.reshape(-1, v).T @ gxa)

    return Tensor._make(val, (x, adj, W), "graph_conv", backward)


def temporal_conv(x: Tensor, kernel: Tensor) -> Tensor:
    """Zero-padded 1-D convolution along T, shared across joints. kernel is [k, C, C']."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"temporal kernel size must be odd, got {k}")
    if x.ndim != 4 or kernel.ndim != 3 or kernel.shape[1] != x.shape[1]:
        raise ShapeError(f"temporal_conv: x {x.shape}, kernel {kernel.shape}")
    n, c, T, v = x.shape
    d = kernel.shape[2]
    pad = (k - 1) // 2
    TV = T * v
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (0, 0))).reshape(n, c, -1)
    # im2col over the flattened (t, v) axis: tap j is a shift by j*v
    cols = np.concatenate([xp[:, :, j * v:j * v + TV] for j in range(k)], axis=1)  # n, k*c, TV
    kmat = kernel.data.reshape(k * c, d)
    val = np.matmul(kmat.T, cols).reshape(n, d, T, v)

    def backward(out):
        g = out.grad.reshape(n, d, TV)
        if kernel.requires_grad:
            kernel._accumulate(np.tensordot(cols, g, axes=([0, 2], [0, 2])).reshape(k, c, d))
        if x.requires_grad:
            gcols = np.matmul(kmat, g)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, j * v:j * v + TV] += gcols[:, j * c:(j + 1) * c]
            x._accumulate(gxp[:, :, pad * v:pad * v + TV].reshape(n, c, T, v))

    return Tensor._make(val, (x, kernel), "temporal_conv", backward)


def channel_linear(x: Tensor, W: Tensor) -> Tensor:
    """Per-joint, per-frame channel map [n,c,t,v] -> [n,d,t,v]."""
    return einsum("nctv,cd->ndtv", x, W)


def cross_attention_gate(src: Tensor, dst: Tensor, W_g: Tensor) -> Tensor:
    """Scale ``dst`` channel-wise by sigmoid(W_g . pooled(src))."""
    src, dst, W_g = as_tensor(src), as_tensor(dst), as_tensor(W_g)
    if src.ndim != 4 or dst.ndim != 4 or src.shape[:2] != dst.shape[:2] or W_g.shape != (src.shape[1],) * 2:
        raise ShapeError(f"cross_attention_gate: src {src.shape}, dst {dst.shape}, W_g {W_g.shape}")
    pooled = src.mean(axis=(2, 3))
    gate = einsum("nc,cd->nd", pooled, W_g).sigmoid()
    return dst * gate.reshape(*gate.shape, 1, 1)


def temporal_pool(x: Tensor) -> Tensor:
    """Average adjacent frame pairs, halving T (an odd last frame is repeated)."""
    n, c, T, v = x.shape
    if T < 2:
        return x
    if T % 2:
        x = x[:, :, np.minimum(np.arange(T + 1), T - 1)]
        T += 1
    return x.reshape(n, c, T // 2, 2, v).mean(axis=3)


def global_pool(x: Tensor) -> Tensor:
    return x.mean(axis=(2, 3))


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return einsum("nc,ck->nk", x, W) + b
