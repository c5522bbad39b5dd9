"""Skeleton sequences, graph topologies and the JSONL sequence format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

C = 3

# NTU RGB+D 25-joint tree, 0-based, as (parent, child). Root is the spine base (hip).
NTU_BODY_EDGES: tuple[tuple[int, int], ...] = (
    (0, 1), (1, 20), (20, 2), (2, 3),
    (20, 4), (4, 5), (5, 6), (6, 7), (7, 22), (22, 21),
    (20, 8), (8, 9), (9, 10), (10, 11), (11, 24), (24, 23),
    (0, 12), (12, 13), (13, 14), (14, 15),
    (0, 16), (16, 17), (17, 18), (18, 19),
)
BODY_HIP = 0
BODY_LEFT_WRIST = 6
BODY_RIGHT_WRIST = 10

# MediaPipe hand: wrist 0, then four joints per finger (thumb, index, middle, ring, pinky).
HAND_WRIST = 0
HAND_INDEX_MCP = 5
HAND_MIDDLE_MCP = 9
HAND_PINKY_MCP = 17
HAND_ANCHORS = (HAND_WRIST, HAND_INDEX_MCP, HAND_MIDDLE_MCP, HAND_PINKY_MCP)
FINGER_CHAINS = tuple(tuple(range(1 + 4 * f, 5 + 4 * f)) for f in range(5))
MEDIAPIPE_HAND_EDGES: tuple[tuple[int, int], ...] = tuple(
    (HAND_WRIST if i == 0 else chain[i - 1], chain[i])
    for chain in FINGER_CHAINS
    for i in range(4)
)

BODY_JOINTS = 25
HAND_JOINTS = 21
DUMMY_JOINTS = 4


class SkeletonError(ValueError):
    """Malformed sequence, topology or record."""


@dataclass(frozen=True)
class GraphTopology:
    name: str
    joint_count: int
    edges: tuple[tuple[int, int], ...]
    dummy_mask: tuple[bool, ...]
    center_joints: tuple[int, ...]
    # named joint groups ("body", "left_hand", ...) and the center joint of each
    parts: dict[str, tuple[int, ...]] = field(default_factory=dict, compare=False)
    part_centers: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        problems = topology_violations(self)
        if problems:
            raise SkeletonError(f"invalid topology {self.name!r}: " + "; ".join(problems))

    def parents(self) -> np.ndarray:
        """Parent index per joint, -1 for roots."""
        parent = np.full(self.joint_count, -1, dtype=np.int64)
        for p, c in self.edges:
            parent[c] = p
        return parent

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.joint_count, self.joint_count))
        for p, c in self.edges:
            a[p, c] = a[c, p] = 1.0
        return a

    def subtopology(self, joints: Iterable[int], name: str) -> "GraphTopology":
        """Induced subgraph on ``joints`` with re-indexed edges (cross edges dropped)."""
        joints = list(joints)
        index = {j: i for i, j in enumerate(joints)}
        edges = tuple((index[p], index[c]) for p, c in self.edges if p in index and c in index)
        centers = tuple(index[j] for j in self.center_joints if j in index)
        parts = {}
        part_centers = {}
        for part, members in self.parts.items():
            kept = tuple(index[j] for j in members if j in index)
            if kept:
                parts[part] = kept
                if part in self.part_centers and self.part_centers[part] in index:
                    part_centers[part] = index[self.part_centers[part]]
        return GraphTopology(
            name=name,
            joint_count=len(joints),
            edges=edges,
            dummy_mask=tuple(self.dummy_mask[j] for j in joints),
            center_joints=centers,
            parts=parts,
            part_centers=part_centers,
        )


def topology_violations(topo: GraphTopology) -> list[str]:
    out = []
    if topo.joint_count < 1:
        out.append("joint_count must be positive")
    if len(topo.dummy_mask) != topo.joint_count:
        out.append("dummy_mask length differs from joint_count")
        return out
    seen_child = set()
    for p, c in topo.edges:
        if not (0 <= p < topo.joint_count and 0 <= c < topo.joint_count):
            out.append(f"edge ({p}, {c}) out of range")
            continue
        if p == c:
            out.append(f"self-loop at {p}")
        if c in seen_child:
            out.append(f"joint {c} has more than one parent")
        seen_child.add(c)
        if topo.dummy_mask[p] or topo.dummy_mask[c]:
            out.append(f"edge ({p}, {c}) touches a dummy joint")
    if not out:
        # cycle check: walk parent pointers
        parent = {c: p for p, c in topo.edges}
        for start in range(topo.joint_count):
            v, steps = start, 0
            while v in parent:
                v = parent[v]
                steps += 1
                if steps > topo.joint_count:
                    out.append(f"cycle through joint {start}")
                    break
            if out:
                break
    for j in topo.center_joints:
        if not 0 <= j < topo.joint_count:
            out.append(f"center joint {j} out of range")
        elif topo.dummy_mask[j]:
            out.append(f"center joint {j} is a dummy")
    return out


def build_body_topology() -> GraphTopology:
    return GraphTopology(
        name="body",
        joint_count=BODY_JOINTS,
        edges=NTU_BODY_EDGES,
        dummy_mask=(False,) * BODY_JOINTS,
        center_joints=(BODY_HIP,),
        parts={"body": tuple(range(BODY_JOINTS))},
        part_centers={"body": BODY_HIP},
    )


def build_hand_topology() -> GraphTopology:
    return GraphTopology(
        name="hand",
        joint_count=HAND_JOINTS,
        edges=MEDIAPIPE_HAND_EDGES,
        dummy_mask=(False,) * HAND_JOINTS,
        center_joints=(HAND_WRIST,),
        parts={"hand": tuple(range(HAND_JOINTS))},
        part_centers={"hand": HAND_WRIST},
    )


LEFT_HAND_OFFSET = BODY_JOINTS
RIGHT_HAND_OFFSET = BODY_JOINTS + HAND_JOINTS
DUMMY_OFFSET = BODY_JOINTS + 2 * HAND_JOINTS
COMBINED_JOINTS = DUMMY_OFFSET + DUMMY_JOINTS


def build_combined_topology() -> GraphTopology:
    """Body (25) + left hand (21) + right hand (21) + 4 zero-masked dummies."""
    edges = list(NTU_BODY_EDGES)
    for offset, body_wrist in ((LEFT_HAND_OFFSET, BODY_LEFT_WRIST), (RIGHT_HAND_OFFSET, BODY_RIGHT_WRIST)):
        edges.append((body_wrist, offset + HAND_WRIST))
        edges.extend((offset + p, offset + c) for p, c in MEDIAPIPE_HAND_EDGES)
    return GraphTopology(
        name="combined",
        joint_count=COMBINED_JOINTS,
        edges=tuple(edges),
        dummy_mask=(False,) * DUMMY_OFFSET + (True,) * DUMMY_JOINTS,
        center_joints=(BODY_HIP, LEFT_HAND_OFFSET + HAND_WRIST, RIGHT_HAND_OFFSET + HAND_WRIST),
        parts={
            "body": tuple(range(BODY_JOINTS)),
            "left_hand": tuple(range(LEFT_HAND_OFFSET, LEFT_HAND_OFFSET + HAND_JOINTS)),
            "right_hand": tuple(range(RIGHT_HAND_OFFSET, RIGHT_HAND_OFFSET + HAND_JOINTS)),
            "dummy": tuple(range(DUMMY_OFFSET, COMBINED_JOINTS)),
        },
        part_centers={
            "body": BODY_HIP,
            "left_hand": LEFT_HAND_OFFSET + HAND_WRIST,
            "right_hand": RIGHT_HAND_OFFSET + HAND_WRIST,
        },
    )


def hand_parts(topo: GraphTopology) -> list[str]:
    return [p for p in topo.parts if p.endswith("hand")]


TOPOLOGIES = {
    "body": build_body_topology,
    "hand": build_hand_topology,
    "combined": build_combined_topology,
}


def get_topology(name: str) -> GraphTopology:
    try:
        return TOPOLOGIES[name]()
    except KeyError:
        raise SkeletonError(f"unknown topology {name!r}") from None


def stream_joints(topo: GraphTopology) -> tuple[list[int], list[int]]:
    """Joint indices feeding the body stream and the hand stream (hands + dummies)."""
    body = list(topo.parts.get("body", ()))
    hand = [j for part in hand_parts(topo) for j in topo.parts[part]]
    hand += list(topo.parts.get("dummy", ()))
    return body, hand


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """coords is C x T x V, valid is T x V. Invalid samples are zero."""

    coords: np.ndarray
    valid: np.ndarray
    fps: float = 30.0
    label: int = 0
    topology_name: str = "combined"
    id: str = ""

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        coords.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "valid", valid)
        if coords.ndim != 3 or valid.ndim != 2 or coords.shape[1:] != valid.shape:
            raise SkeletonError(f"shape mismatch: coords {coords.shape}, valid {valid.shape}")

    @property
    def T(self) -> int:
        return self.coords.shape[1]

    @property
    def V(self) -> int:
        return self.coords.shape[2]

    def with_data(self, coords: np.ndarray, valid: np.ndarray | None = None) -> "SkeletonSequence":
        return replace(self, coords=coords, valid=self.valid if valid is None else valid)

    def __eq__(self, other):
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.label == other.label
            and self.topology_name == other.topology_name
            and self.id == other.id
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.valid, other.valid)
        )


def zero_masked(coords: np.ndarray, valid: np.ndarray) -> np.ndarray:
    return np.where(valid[None], coords, 0.0)


@dataclass
class DatasetSplit:
    sequences: list[SkeletonSequence]
    class_count: int
    split_tag: str = "train"

    def __post_init__(self):
        if not self.sequences:
            raise SkeletonError("dataset split is empty")
        if self.split_tag not in ("train", "val", "test"):
            raise SkeletonError(f"bad split tag {self.split_tag!r}")
        bad = [s.label for s in self.sequences if not 0 <= s.label < self.class_count]
        if bad:
            raise SkeletonError(f"labels {sorted(set(bad))} outside [0, {self.class_count})")

    def __len__(self):
        return len(self.sequences)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=np.int64)


def validate_sequence(seq: SkeletonSequence, topo: GraphTopology) -> list[str]:
    report = []
    if seq.coords.shape[0] != C:
        report.append(f"channel count {seq.coords.shape[0]} != {C}")
    if seq.T < 1:
        report.append("empty sequence")
    if seq.V != topo.joint_count:
        report.append(f"joint count {seq.V} != topology {topo.name!r} ({topo.joint_count})")
    if seq.topology_name != topo.name:
        report.append(f"topology name {seq.topology_name!r} != {topo.name!r}")
    finite = np.isfinite(seq.coords)
    if not finite.all():
        t, v = np.argwhere(~finite.all(axis=0))[0]
        report.append(f"non-finite coordinate at t={t}, v={v}")
    leaked = (~seq.valid) & np.any(np.where(finite, seq.coords, 1.0) != 0.0, axis=0)
    if leaked.any():
        t, v = np.argwhere(leaked)[0]
        report.append(f"zero-mask violation: {int(leaked.sum())} invalid samples are non-zero (first t={t}, v={v})")
    if seq.V == topo.joint_count:
        dummy = np.array(topo.dummy_mask)
        if seq.valid[:, dummy].any():
            report.append("dummy joint marked valid")
    if not seq.fps > 0:
        report.append(f"fps must be positive, got {seq.fps}")
    return report


# --- JSONL ------------------------------------------------------------------


def sequence_to_record(seq: SkeletonSequence) -> dict:
    c, t, v = seq.coords.shape
    return {
        "id": seq.id,
        "label": int(seq.label),
        "fps": float(seq.fps),
        "C": c,
        "T": t,
        "V": v,
        "topology": seq.topology_name,
        "coords": seq.coords.ravel().tolist(),
        "valid": seq.valid.ravel().tolist(),
    }


def record_to_sequence(rec: dict) -> SkeletonSequence:
    try:
        c, t, v = int(rec["C"]), int(rec["T"]), int(rec["V"])
        coords, valid = rec["coords"], rec["valid"]
        if len(coords) != c * t * v:
            raise SkeletonError(f"record {rec.get('id')!r}: coords has {len(coords)} values, expected C*T*V={c * t * v}")
        if len(valid) != t * v:
            raise SkeletonError(f"record {rec.get('id')!r}: valid has {len(valid)} values, expected T*V={t * v}")
        return SkeletonSequence(
            coords=np.asarray(coords, dtype=np.float64).reshape(c, t, v),
            valid=np.asarray(valid, dtype=bool).reshape(t, v),
            fps=float(rec["fps"]),
            label=int(rec["label"]),
            topology_name=str(rec["topology"]),
            id=str(rec["id"]),
        )
    except KeyError as e:
        raise SkeletonError(f"record missing field {e}") from None


def write_jsonl(path: str | Path, sequences: Iterable[SkeletonSequence]) -> None:
    with open(path, "w") as f:
        for seq in sequences:
            f.write(json.dumps(sequence_to_record(seq)) + "\n")


def iter_jsonl(path: str | Path) -> Iterator[SkeletonSequence]:
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield record_to_sequence(json.loads(line))
            except (SkeletonError, json.JSONDecodeError) as e:
                raise SkeletonError(f"{path}:{lineno}: {e}") from None


def read_jsonl(path: str | Path) -> list[SkeletonSequence]:
    return list(iter_jsonl(path))
