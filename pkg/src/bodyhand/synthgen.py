"""Synthetic body+hand sequences with a deliberate reliability asymmetry.

Class ``b * N_h + h`` pairs body motif ``b`` (sinusoidal arm trajectories) with hand
motif ``h`` (per-finger curl envelopes). Classes sharing ``b`` have the same body
template, so only the hands tell them apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import (
    BODY_JOINTS,
    BODY_LEFT_WRIST,
    BODY_RIGHT_WRIST,
    COMBINED_JOINTS,
    DUMMY_OFFSET,
    FINGER_CHAINS,
    HAND_JOINTS,
    HAND_WRIST,
    LEFT_HAND_OFFSET,
    RIGHT_HAND_OFFSET,
    DatasetSplit,
    SkeletonError,
    SkeletonSequence,
    zero_masked,
)

SPLIT_CODES = {"train": 0, "val": 1, "test": 2}

# rest pose, x right / y up / z toward camera
_REST_BODY = np.array([
    [0.00, 0.00, 0.00],  # 0 spine base (hip)
    [0.00, 0.25, 0.00],  # 1 spine mid
    [0.00, 0.60, 0.00],  # 2 neck
    [0.00, 0.72, 0.00],  # 3 head
    [0.18, 0.50, 0.00],  # 4 left shoulder
    [0.20, 0.22, 0.00],  # 5 left elbow
    [0.22, 0.00, 0.00],  # 6 left wrist
    [0.23, -0.06, 0.00],  # 7 left hand
    [-0.18, 0.50, 0.00],  # 8 right shoulder
    [-0.20, 0.22, 0.00],  # 9 right elbow
    [-0.22, 0.00, 0.00],  # 10 right wrist
    [-0.23, -0.06, 0.00],  # 11 right hand
    [0.10, 0.00, 0.00],  # 12 left hip
    [0.10, -0.45, 0.00],  # 13 left knee
    [0.10, -0.85, 0.00],  # 14 left ankle
    [0.10, -0.90, 0.08],  # 15 left foot
    [-0.10, 0.00, 0.00],  # 16 right hip
    [-0.10, -0.45, 0.00],  # 17 right knee
    [-0.10, -0.85, 0.00],  # 18 right ankle
    [-0.10, -0.90, 0.08],  # 19 right foot
    [0.00, 0.50, 0.00],  # 20 spine shoulder
    [0.24, -0.12, 0.00],  # 21 left hand tip
    [0.20, -0.06, 0.03],  # 22 left thumb
    [-0.24, -0.12, 0.00],  # 23 right hand tip
    [-0.20, -0.06, 0.03],  # 24 right thumb
])
# how strongly each joint follows the arm trajectory
_LEFT_ARM = {5: 0.5, 6: 1.0, 7: 1.0, 21: 1.0, 22: 1.0}
_RIGHT_ARM = {9: 0.5, 10: 1.0, 11: 1.0, 23: 1.0, 24: 1.0}

# finger bases in the hand frame (x across palm, y along fingers, z out of palm)
_FINGER_BASE = np.array([[0.030, 0.020, 0.0], [0.025, 0.085, 0.0], [0.005, 0.090, 0.0],
                         [-0.015, 0.085, 0.0], [-0.032, 0.075, 0.0]])
_FINGER_DIR = np.array([[0.7, 0.7, 0.0], [0.05, 1.0, 0.0], [0.0, 1.0, 0.0], [-0.05, 1.0, 0.0], [-0.12, 1.0, 0.0]])
_FINGER_DIR = _FINGER_DIR / np.linalg.norm(_FINGER_DIR, axis=1, keepdims=True)
_SEGMENTS = np.array([[0.035, 0.030, 0.025], [0.040, 0.025, 0.020], [0.045, 0.028, 0.022],
                      [0.040, 0.026, 0.020], [0.032, 0.020, 0.018]])
_PALM_NORMAL = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class SynthConfig:
    body_motifs: int = 3
    hand_motifs: int = 3
    samples_per_class: int = 40
    T: int = 64
    sigma_body: float = 0.005
    sigma_hand: float = 0.03
    hand_dropout_rate: float = 0.1
    seed: int = 0
    # per-sample amplitude / phase / speed variation; 0 gives exact templates
    jitter: float = 0.15

    def __post_init__(self):
        if self.body_motifs < 1 or self.hand_motifs < 1:
            raise SkeletonError("need at least one body and one hand motif")
        if self.samples_per_class < 1 or self.T < 2:
            raise SkeletonError("samples_per_class >= 1 and T >= 2 required")
        if self.sigma_body < 0 or self.sigma_hand < 0:
            raise SkeletonError("noise levels must be non-negative")
        if not 0 <= self.hand_dropout_rate < 1:
            raise SkeletonError("hand_dropout_rate must lie in [0, 1)")

    @property
    def class_count(self) -> int:
        return self.body_motifs * self.hand_motifs


def _body_motif(b: int):
    """(frequency in cycles per sequence, phase, left amplitude xyz, right amplitude xyz)."""
    rng = np.random.default_rng([7919, b])
    freq = 1.0 + (b % 3)
    phase = 2 * np.pi * b / 3.0 + rng.uniform(0, 0.5)
    left = np.array([0.10, 0.25, 0.15]) * rng.uniform(0.6, 1.0, 3)
    right = np.array([0.10, 0.25, 0.15]) * rng.uniform(0.6, 1.0, 3)
    if b % 2:
        right = right * 0.2
    return freq, phase, left, right


def _hand_motif(h: int):
    """(base curl per finger, curl amplitude per finger, frequency, per-finger phase)."""
    presets = [
        (np.full(5, 0.65), np.full(5, 0.3), 1.0, np.zeros(5)),  # pulsing fist
        (np.array([0.5, 0.0, 0.9, 0.9, 0.9]), np.array([0.1, 0.05, 0.05, 0.05, 0.05]), 1.0, np.zeros(5)),  # point
        (np.full(5, 0.1), np.full(5, 0.35), 2.0, np.arange(5) * np.pi / 2.5),  # finger taps
        (np.array([0.0, 0.0, 0.0, 0.9, 0.9]), np.full(5, 0.05), 1.0, np.zeros(5)),  # victory-like
        (np.array([0.0, 0.9, 0.9, 0.9, 0.9]), np.array([0.0, 0.1, 0.1, 0.1, 0.1]), 2.0, np.zeros(5)),  # thumb up
    ]
    if h < len(presets):
        return presets[h]
    rng = np.random.default_rng([104729, h])
    return rng.uniform(0, 0.9, 5), rng.uniform(0, 0.3, 5), float(rng.integers(1, 4)), rng.uniform(0, 2 * np.pi, 5)


def body_template(b: int, T: int, amp_scale: float = 1.0, phase_shift: float = 0.0, speed: float = 1.0) -> np.ndarray:
    """Noiseless body joints, 3 x T x 25."""
    freq, phase, left, right = _body_motif(b)
    t = np.arange(T) / T
    arg = 2 * np.pi * freq * speed * t + phase + phase_shift
    wave = np.stack([np.sin(arg), np.sin(arg + np.pi / 2), np.sin(2 * arg)])  # 3 x T
    out = np.repeat(_REST_BODY.T[:, None, :], T, axis=1)
    for joints, amp in ((_LEFT_ARM, left), (_RIGHT_ARM, right)):
        for j, w in joints.items():
            out[:, :, j] += w * amp_scale * amp[:, None] * wave
    return out


def hand_shape(curl: np.ndarray) -> np.ndarray:
    """Joints in the local hand frame from per-finger curl in [0, 1].

    ``curl`` is (5,) for one frame or (T, 5); the result is (21, 3) or (T, 21, 3).
    """
    curl = np.asarray(curl, dtype=np.float64)
    single = curl.ndim == 1
    curl = np.atleast_2d(curl)
    pts = np.zeros((curl.shape[0], HAND_JOINTS, 3))
    for f, chain in enumerate(FINGER_CHAINS):
        theta = curl[:, f, None] * np.pi / 2.5
        p = np.broadcast_to(_FINGER_BASE[f], (curl.shape[0], 3)).copy()
        pts[:, chain[0]] = p
        for s in range(3):
            ang = (s + 1) * theta
            d = np.cos(ang) * _FINGER_DIR[f] + np.sin(ang) * _PALM_NORMAL
            p = p + _SEGMENTS[f, s] * d
            pts[:, chain[s + 1]] = p
    return pts[0] if single else pts


def hand_template(h: int, T: int, amp_scale: float = 1.0, phase_shift: float = 0.0, speed: float = 1.0) -> np.ndarray:
    """Noiseless hand joints relative to the wrist, 3 x T x 21."""
    base, amp, freq, phases = _hand_motif(h)
    t = np.arange(T)[:, None] / T
    env = 0.5 - 0.5 * np.cos(2 * np.pi * freq * speed * t + phases + phase_shift)
    curl = np.clip(base + amp_scale * amp * env, 0.0, 1.0)
    return hand_shape(curl).transpose(2, 0, 1)


# hands hang along the forearm: local y (fingers) maps to world -y
_HAND_ROT_LEFT = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
_HAND_ROT_RIGHT = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])


def _sequence(cfg: SynthConfig, label: int, rng: np.random.Generator, sid: str) -> SkeletonSequence:
    b, h = divmod(label, cfg.hand_motifs)
    T = cfg.T
    j = cfg.jitter
    amp = 1.0 + j * rng.uniform(-1, 1)
    phase = j * rng.uniform(-2, 2)
    speed = 1.0 + 0.5 * j * rng.uniform(-1, 1)
    hand_amp = 1.0 + j * rng.uniform(-1, 1)
    hand_phase = j * rng.uniform(-2, 2)
    offset = j * rng.uniform(-0.3, 0.3, 3)

    coords = np.zeros((3, T, COMBINED_JOINTS))
    body = body_template(b, T, amp, phase, speed) + offset[:, None, None]
    coords[:, :, :BODY_JOINTS] = body
    hand = hand_template(h, T, hand_amp, hand_phase, speed)
    for start, wrist, rot in ((LEFT_HAND_OFFSET, BODY_LEFT_WRIST, _HAND_ROT_LEFT),
                              (RIGHT_HAND_OFFSET, BODY_RIGHT_WRIST, _HAND_ROT_RIGHT)):
        local = np.einsum("ij,jtv->itv", rot, hand)
        coords[:, :, start:start + HAND_JOINTS] = local + body[:, :, wrist, None]

    # draw noise in a fixed order so the stream layout never depends on the sigmas
    body_noise = rng.standard_normal((3, T, BODY_JOINTS))
    hand_noise = rng.standard_normal((3, T, 2 * HAND_JOINTS))
    drop = rng.random(T) < cfg.hand_dropout_rate
    coords[:, :, :BODY_JOINTS] += cfg.sigma_body * body_noise
    coords[:, :, BODY_JOINTS:DUMMY_OFFSET] += cfg.sigma_hand * hand_noise

    valid = np.ones((T, COMBINED_JOINTS), dtype=bool)
    valid[:, DUMMY_OFFSET:] = False
    valid[np.ix_(drop, np.arange(BODY_JOINTS, DUMMY_OFFSET))] = False
    return SkeletonSequence(zero_masked(coords, valid), valid, 30.0, label, "combined", sid)


def generate_dataset(cfg: SynthConfig, split_tag: str = "train") -> DatasetSplit:
    code = SPLIT_CODES[split_tag]
    seqs = []
    idx = 0
    for label in range(cfg.class_count):
        for _ in range(cfg.samples_per_class):
            rng = np.random.default_rng([cfg.seed, code, idx])
            seqs.append(_sequence(cfg, label, rng, f"{split_tag}-{idx:05d}"))
            idx += 1
    return DatasetSplit(seqs, cfg.class_count, split_tag)


def inject_hand_noise(split: DatasetSplit, sigma: float, dropout_rate: float, seed: int) -> DatasetSplit:
    """Extra Gaussian noise on observed hand joints plus whole-frame hand dropout. Body untouched."""
    if sigma < 0 or not 0 <= dropout_rate < 1:
        raise SkeletonError(f"bad noise settings sigma={sigma}, dropout_rate={dropout_rate}")
    hands = np.arange(BODY_JOINTS, DUMMY_OFFSET)
    out = []
    for i, seq in enumerate(split.sequences):
        if seq.V != COMBINED_JOINTS:
            raise SkeletonError(f"hand noise expects combined-topology sequences, got V={seq.V}")
        rng = np.random.default_rng([seed, i])
        noise = rng.standard_normal((3, seq.T, hands.size))
        drop = rng.random(seq.T) < dropout_rate
        coords = seq.coords.copy()
        valid = seq.valid.copy()
        coords[:, :, hands] += sigma * noise * valid[None][:, :, hands]
        valid[np.ix_(drop, hands)] = False
        out.append(seq.with_data(zero_masked(coords, valid), valid))
    return DatasetSplit(out, split.class_count, split.split_tag)
