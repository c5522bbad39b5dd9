"""Joint, Bone, Joint Motion and Bone Motion views of a preprocessed sequence."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .skeleton import GraphTopology, SkeletonError, SkeletonSequence


class Kind(str, Enum):
    J = "J"
    B = "B"
    JM = "JM"
    BM = "BM"


@dataclass(frozen=True, eq=False)
class ModalityTensor:
    kind: Kind
    data: np.ndarray  # C x T x V
    source_id: str = ""
    valid: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not np.isfinite(self.data).all():
            raise SkeletonError(f"{self.kind.value} tensor for {self.source_id!r} has non-finite values")


def _bone_array(coords: np.ndarray, valid: np.ndarray, topo: GraphTopology):
    parent = topo.parents()
    child = np.flatnonzero(parent >= 0)
    bone = np.zeros_like(coords)
    ok = np.zeros_like(valid)
    ok[:, child] = valid[:, child] & valid[:, parent[child]]
    bone[:, :, child] = coords[:, :, child] - coords[:, :, parent[child]]
    return np.where(ok[None], bone, 0.0), ok


def derive_bone(seq: SkeletonSequence, topo: GraphTopology) -> ModalityTensor:
    if seq.V != topo.joint_count:
        raise SkeletonError(f"sequence V={seq.V} does not match topology {topo.name!r}")
    data, ok = _bone_array(seq.coords, seq.valid, topo)
    return ModalityTensor(Kind.B, data, seq.id, ok)


def derive_motion(m: ModalityTensor) -> ModalityTensor:
    if m.kind not in (Kind.J, Kind.B):
        raise SkeletonError(f"motion is defined for J and B, got {m.kind.value}")
    T = m.data.shape[1]
    if T < 2:
        raise SkeletonError(f"motion needs T >= 2, got {T}")
    motion = np.zeros_like(m.data)
    motion[:, :-1] = m.data[:, 1:] - m.data[:, :-1]
    valid = None
    if m.valid is not None:
        valid = np.zeros_like(m.valid)
        valid[:-1] = m.valid[1:] & m.valid[:-1]
        motion = np.where(valid[None], motion, 0.0)
    return ModalityTensor(Kind.JM if m.kind is Kind.J else Kind.BM, motion, m.source_id, valid)


def joint_tensor(seq: SkeletonSequence) -> ModalityTensor:
    return ModalityTensor(Kind.J, seq.coords.copy(), seq.id, seq.valid.copy())


def modality_set(seq: SkeletonSequence, topo: GraphTopology) -> dict[Kind, ModalityTensor]:
    j = joint_tensor(seq)
    b = derive_bone(seq, topo)
    return {Kind.J: j, Kind.B: b, Kind.JM: derive_motion(j), Kind.BM: derive_motion(b)}


def as_sequence(m: ModalityTensor, like: SkeletonSequence) -> SkeletonSequence:
    """Wrap a modality back into a sequence so the same network/IO path serves all four."""
    valid = like.valid if m.valid is None else m.valid
    return like.with_data(np.where(valid[None], m.data, 0.0), valid)
