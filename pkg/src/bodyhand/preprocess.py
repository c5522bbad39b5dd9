"""Calibration-free preprocessing: validity filtering, gap filling, resampling, centering.

The canonical hand transform is kept only as an ablation; the default pipeline never
runs it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .skeleton import (
    HAND_INDEX_MCP,
    HAND_JOINTS,
    HAND_MIDDLE_MCP,
    HAND_PINKY_MCP,
    HAND_WRIST,
    GraphTopology,
    SkeletonError,
    SkeletonSequence,
    hand_parts,
    zero_masked,
)

DEGENERATE_TOL = 1e-9


class Centering(str, Enum):
    BODY_HIP = "body_hip"
    HAND_WRIST = "hand_wrist"
    NONE = "none"


@dataclass(frozen=True)
class PreprocessConfig:
    target_length: int = 64
    max_gap: int = 5
    centering: Centering = Centering.HAND_WRIST
    canonical: bool = False

    def __post_init__(self):
        object.__setattr__(self, "centering", Centering(self.centering))
        if self.target_length < 2:
            raise SkeletonError(f"target_length must be >= 2, got {self.target_length}")
        if self.max_gap < 0:
            raise SkeletonError(f"max_gap must be >= 0, got {self.max_gap}")


def detect_valid_frames(seq: SkeletonSequence, joint_subset) -> np.ndarray:
    joints = np.asarray(list(joint_subset), dtype=np.int64)
    if joints.size == 0:
        raise SkeletonError("joint_subset is empty")
    if joints.min() < 0 or joints.max() >= seq.V:
        raise SkeletonError(f"joint index out of range for V={seq.V}")
    return seq.valid[:, joints].all(axis=1)


def filter_partial_hands(seq: SkeletonSequence, topo: GraphTopology) -> SkeletonSequence:
    """Drop every hand observation on frames where that hand is only partially detected."""
    valid = seq.valid.copy()
    for part in hand_parts(topo):
        joints = list(topo.parts[part])
        ok = detect_valid_frames(seq, joints)
        valid[np.ix_(~ok, joints)] = False
    return seq.with_data(zero_masked(seq.coords, valid), valid)


def _runs(mask: np.ndarray):
    """(start, stop) of each run of True in a 1-D mask."""
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return zip(edges[::2], edges[1::2])


def interpolate_gaps(seq: SkeletonSequence, max_gap: int) -> SkeletonSequence:
    coords = seq.coords.copy()
    valid = seq.valid.copy()
    T = seq.T
    for v in range(seq.V):
        for start, stop in _runs(~seq.valid[:, v]):
            if start == 0 or stop == T or stop - start > max_gap:
                continue
            left, right = start - 1, stop
            w = (np.arange(start, stop) - left) / (right - left)
            coords[:, start:stop, v] = (
                coords[:, left, v, None] * (1.0 - w) + coords[:, right, v, None] * w
            )
            valid[start:stop, v] = True
    return seq.with_data(coords, valid)


def resample_temporal(seq: SkeletonSequence, target_length: int) -> SkeletonSequence:
    T = seq.T
    if T < 2:
        raise SkeletonError(f"resampling needs T >= 2, got {T}")
    if target_length == T:
        return seq.with_data(seq.coords.copy(), seq.valid.copy())
    pos = np.arange(target_length) * (T - 1) / (target_length - 1)
    lo = np.clip(np.floor(pos).astype(np.int64), 0, T - 1)
    hi = np.minimum(lo + 1, T - 1)
    w = pos - lo
    near = np.clip(np.rint(pos).astype(np.int64), 0, T - 1)
    valid = seq.valid[near]
    linear = seq.coords[:, lo] * (1.0 - w)[None, :, None] + seq.coords[:, hi] * w[None, :, None]
    # mixing a zero-masked neighbour into the interpolant would pull values toward 0
    both = seq.valid[lo] & seq.valid[hi]
    coords = np.where(both[None], linear, seq.coords[:, near])
    return seq.with_data(zero_masked(coords, valid), valid)


def pad_boundary(seq: SkeletonSequence, target_length: int) -> SkeletonSequence:
    T = seq.T
    if T > target_length:
        raise SkeletonError(f"cannot pad T={T} down to {target_length}")
    idx = np.minimum(np.arange(target_length), T - 1)
    return seq.with_data(seq.coords[:, idx], seq.valid[idx])


def _center_on(coords, valid, joints, center):
    """Subtract ``center`` from ``joints`` per frame; frames without a center lose the joints."""
    joints = np.asarray(joints)
    has_center = valid[:, center].copy()
    ref = coords[:, :, center].copy()
    coords[:, :, joints] -= ref[:, :, None]
    valid[np.ix_(~has_center, joints)] = False
    return coords, valid


def center_body(seq: SkeletonSequence, topo: GraphTopology) -> SkeletonSequence:
    if not topo.center_joints:
        raise SkeletonError(f"topology {topo.name!r} has no center joint")
    hip = topo.part_centers.get("body", topo.center_joints[0])
    joints = [j for j in range(topo.joint_count) if not topo.dummy_mask[j]]
    coords, valid = _center_on(seq.coords.copy(), seq.valid.copy(), joints, hip)
    return seq.with_data(zero_masked(coords, valid), valid)


def center_hand(seq: SkeletonSequence, topo: GraphTopology) -> SkeletonSequence:
    parts = hand_parts(topo)
    if not parts:
        raise SkeletonError(f"topology {topo.name!r} has no hand part")
    coords, valid = seq.coords.copy(), seq.valid.copy()
    for part in parts:
        coords, valid = _center_on(coords, valid, topo.parts[part], topo.part_centers[part])
    return seq.with_data(zero_masked(coords, valid), valid)


def _palm_frame(wrist, index_mcp, middle_mcp, pinky_mcp):
    """Rows are the orthonormal palm axes, or None when the anchors are degenerate."""
    u = middle_mcp - wrist
    nu = np.linalg.norm(u)
    n = np.cross(index_mcp - wrist, pinky_mcp - wrist)
    if nu < DEGENERATE_TOL:
        return None
    u = u / nu
    n = n - (n @ u) * u
    nn = np.linalg.norm(n)
    if nn < DEGENERATE_TOL:
        return None
    n = n / nn
    return np.stack([u, n, np.cross(u, n)])


def canonical_transform(hand: SkeletonSequence, offset: int = 0) -> tuple[SkeletonSequence, np.ndarray]:
    """Re-express one hand (joints ``offset .. offset+20``) in a palm-anchored frame per frame.

    Returns the transformed sequence and a per-frame flag marking frames left untouched
    because an anchor was missing or the anchors were degenerate.
    """
    coords = hand.coords.copy()
    valid = hand.valid
    joints = np.arange(offset, offset + HAND_JOINTS)
    anchors = [offset + a for a in (HAND_WRIST, HAND_INDEX_MCP, HAND_MIDDLE_MCP, HAND_PINKY_MCP)]
    flagged = np.zeros(hand.T, dtype=bool)
    for t in range(hand.T):
        if not valid[t, anchors].all():
            flagged[t] = True
            continue
        w, i, m, p = (hand.coords[:, t, a] for a in anchors)
        rot = _palm_frame(w, i, m, p)
        if rot is None:
            flagged[t] = True
            continue
        coords[:, t, joints] = rot @ (hand.coords[:, t, joints] - w[:, None])
    return hand.with_data(zero_masked(coords, valid)), flagged


def canonical_all_hands(seq: SkeletonSequence, topo: GraphTopology) -> tuple[SkeletonSequence, np.ndarray]:
    flags = np.zeros(seq.T, dtype=bool)
    parts = hand_parts(topo)
    for part in parts:
        seq, f = canonical_transform(seq, offset=topo.part_centers[part])
        flags |= f
    return seq, flags


def run_pipeline(seq: SkeletonSequence, cfg: PreprocessConfig, topo: GraphTopology) -> SkeletonSequence:
    if seq.V != topo.joint_count:
        raise SkeletonError(f"sequence has V={seq.V}, topology {topo.name!r} has {topo.joint_count}")
    if hand_parts(topo):
        seq = filter_partial_hands(seq, topo)
    seq = interpolate_gaps(seq, cfg.max_gap)
    if seq.T < cfg.target_length:
        seq = pad_boundary(seq, cfg.target_length)
    elif seq.T > cfg.target_length:
        seq = resample_temporal(seq, cfg.target_length)
    if cfg.centering is not Centering.NONE:
        seq = center_body(seq, topo)
    if cfg.centering is Centering.HAND_WRIST and hand_parts(topo):
        seq = center_hand(seq, topo)
    if cfg.canonical:
        seq, _ = canonical_all_hands(seq, topo)
    return seq

