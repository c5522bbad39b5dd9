import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bodyhand.preprocess import (
    Centering,
    PreprocessConfig,
    canonical_transform,
    center_body,
    center_hand,
    detect_valid_frames,
    filter_partial_hands,
    interpolate_gaps,
    pad_boundary,
    resample_temporal,
    run_pipeline,
)
from bodyhand.skeleton import (
    HAND_INDEX_MCP,
    HAND_MIDDLE_MCP,
    HAND_PINKY_MCP,
    HAND_WRIST,
    LEFT_HAND_OFFSET,
    RIGHT_HAND_OFFSET,
    SkeletonError,
    SkeletonSequence,
    build_hand_topology,
    validate_sequence,
)
from bodyhand.synthgen import SynthConfig, generate_dataset

from conftest import make_sequence


def single_joint(values, valid):
    """1 channel-triplet, T frames, one joint with x = values."""
    values = np.asarray(values, dtype=float)
    coords = np.zeros((3, len(values), 1))
    coords[0, :, 0] = values
    coords[1, :, 0] = 2 * values
    valid = np.asarray(valid, dtype=bool)[:, None]
    return SkeletonSequence(np.where(valid[None], coords, 0.0), valid, topology_name="x")


def hand_sequence(T=3, seed=0):
    rng = np.random.default_rng(seed)
    return SkeletonSequence(rng.normal(size=(3, T, 21)), np.ones((T, 21), bool), topology_name="hand")


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# --- detect_valid_frames ----------------------------------------------------


def test_detect_valid_frames_examples():
    seq = make_sequence(T=5)
    assert detect_valid_frames(seq, range(67)).all()
    valid = seq.valid.copy()
    valid[3, 30] = False
    seq = seq.with_data(np.where(valid[None], seq.coords, 0), valid)
    assert detect_valid_frames(seq, [30, 31]).tolist() == [True, True, True, False, True]
    assert detect_valid_frames(seq, [31, 32]).all()


def test_detect_valid_frames_rejects_bad_subsets():
    seq = make_sequence(T=2)
    with pytest.raises(SkeletonError):
        detect_valid_frames(seq, [71])
    with pytest.raises(SkeletonError):
        detect_valid_frames(seq, [])


def test_filter_partial_hands_drops_whole_hand_only(combined):
    seq = make_sequence(T=4)
    valid = seq.valid.copy()
    valid[1, LEFT_HAND_OFFSET + 7] = False
    seq = seq.with_data(np.where(valid[None], seq.coords, 0), valid)
    out = filter_partial_hands(seq, combined)
    assert not out.valid[1, LEFT_HAND_OFFSET:LEFT_HAND_OFFSET + 21].any()
    assert out.valid[1, RIGHT_HAND_OFFSET:RIGHT_HAND_OFFSET + 21].all()
    assert out.valid[1, :25].all()
    assert validate_sequence(out, combined) == []


# --- interpolate_gaps ----------------------------------------------------------


def test_interpolate_midpoint():
    out = interpolate_gaps(single_joint([0.0, 0.0, 1.0], [1, 0, 1]), max_gap=1)
    assert out.coords[0, 1, 0] == 0.5
    assert out.coords[1, 1, 0] == 1.0
    assert out.valid[:, 0].all()


def test_gap_longer_than_max_untouched():
    seq = single_joint([1.0, 0, 0, 0, 2.0], [1, 0, 0, 0, 1])
    out = interpolate_gaps(seq, max_gap=1)
    assert out == seq
    assert out.valid[:, 0].tolist() == [True, False, False, False, True]


def test_boundary_gaps_stay_invalid():
    out = interpolate_gaps(single_joint([0, 1.0, 2.0, 0], [0, 1, 1, 0]), max_gap=5)
    assert out.valid[:, 0].tolist() == [False, True, True, False]
    assert out.coords[:, [0, 3]].sum() == 0


def test_fully_valid_is_identity():
    seq = make_sequence(T=7, valid=np.ones((7, 71), bool))
    assert interpolate_gaps(seq, 5) == seq


@given(st.lists(st.booleans(), min_size=2, max_size=30), st.integers(0, 6), st.integers(0, 1000))
def test_interpolation_only_fills_short_interior_gaps(mask, max_gap, seed):
    mask = np.array(mask)
    values = np.random.default_rng(seed).normal(size=mask.size)
    seq = single_joint(values, mask)
    out = interpolate_gaps(seq, max_gap)
    # valid samples untouched
    assert np.array_equal(out.coords[:, mask], seq.coords[:, mask])
    # expected fill mask from the runs of invalid frames
    expected = mask.copy()
    t = 0
    while t < mask.size:
        if mask[t]:
            t += 1
            continue
        s = t
        while t < mask.size and not mask[t]:
            t += 1
        if s > 0 and t < mask.size and t - s <= max_gap:
            expected[s:t] = True
    assert np.array_equal(out.valid[:, 0], expected)
    assert np.all(out.coords[:, ~expected] == 0)


# --- resample / pad ---------------------------------------------------------------


@given(st.integers(2, 40), st.integers(2, 80), st.floats(-3, 3), st.floats(-3, 3))
def test_resampling_linear_signal_is_exact(T, L, a, b):
    seq = single_joint(a + b * np.arange(T), np.ones(T))
    out = resample_temporal(seq, L)
    pos = np.arange(L) * (T - 1) / (L - 1)
    assert out.T == L
    assert np.max(np.abs(out.coords[0, :, 0] - (a + b * pos))) <= 1e-12 * (1 + abs(a) + abs(b) * T)
    assert out.coords[0, 0, 0] == seq.coords[0, 0, 0]
    assert out.coords[0, -1, 0] == seq.coords[0, -1, 0]


def test_resampling_exact_for_integer_ramp():
    seq = single_joint(np.arange(5.0), np.ones(5))
    out = resample_temporal(seq, 9)
    assert np.array_equal(out.coords[0, :, 0], np.arange(9) * 0.5)


def test_resample_identity_and_errors():
    seq = make_sequence(T=6)
    assert resample_temporal(seq, 6) == seq
    with pytest.raises(SkeletonError):
        resample_temporal(make_sequence(T=1), 4)


def test_resample_validity_is_nearest_neighbour():
    seq = single_joint([1.0, 2.0, 0.0, 4.0, 5.0], [1, 1, 0, 1, 1])
    out = resample_temporal(seq, 3)  # positions 0, 2, 4
    assert out.valid[:, 0].tolist() == [True, False, True]
    assert out.coords[0, 1, 0] == 0.0


def test_pad_boundary_examples():
    seq = make_sequence(T=5)
    out = pad_boundary(seq, 8)
    assert out.T == 8
    for t in (5, 6, 7):
        assert np.array_equal(out.coords[:, t], seq.coords[:, 4])
        assert np.array_equal(out.valid[t], seq.valid[4])
    assert pad_boundary(seq, 5) == seq
    with pytest.raises(SkeletonError):
        pad_boundary(seq, 4)


# --- centering --------------------------------------------------------------------


def pairwise(frame):
    return np.linalg.norm(frame[:, :, None] - frame[:, None, :], axis=0)


def test_center_body_examples(combined):
    seq = make_sequence(T=4, seed=2)
    out = center_body(seq, combined)
    assert np.all(out.coords[:, :, 0] == 0)
    for t in range(4):
        live = np.flatnonzero(out.valid[t])
        d0 = pairwise(seq.coords[:, t][:, live])
        d1 = pairwise(out.coords[:, t][:, live])
        assert np.max(np.abs(d0 - d1)) <= 1e-12
    assert np.all(out.coords[:, ~out.valid] == 0)


def test_center_body_frame_without_hip_is_masked(combined):
    seq = make_sequence(T=3)
    valid = seq.valid.copy()
    valid[1, 0] = False
    out = center_body(seq.with_data(np.where(valid[None], seq.coords, 0), valid), combined)
    assert not out.valid[1, :67].any()
    assert validate_sequence(out, combined) == []


def test_center_hand_examples(combined):
    seq = make_sequence(T=3, seed=4)
    out = center_hand(seq, combined)
    for off in (LEFT_HAND_OFFSET, RIGHT_HAND_OFFSET):
        assert np.all(out.coords[:, :, off] == 0)
    shifted = seq.with_data(seq.coords + np.array([5.0, -2.0, 1.5])[:, None, None] * seq.valid[None])
    out2 = center_hand(shifted, combined)
    hands = slice(25, 67)
    assert np.allclose(out2.coords[:, :, hands], out.coords[:, :, hands], atol=1e-12, rtol=0)
    # independent: moving only the right hand leaves the left hand's local coordinates alone
    coords = seq.coords.copy()
    coords[:, :, RIGHT_HAND_OFFSET:RIGHT_HAND_OFFSET + 21] += 3.0
    out3 = center_hand(seq.with_data(coords), combined)
    left = slice(LEFT_HAND_OFFSET, LEFT_HAND_OFFSET + 21)
    assert np.array_equal(out3.coords[:, :, left], out.coords[:, :, left])


@given(hnp.arrays(np.float64, (3, 2, 71), elements=st.floats(-10, 10)))
def test_centering_preserves_pairwise_distances(coords):
    valid = np.ones((2, 71), bool)
    valid[:, 67:] = False
    seq = SkeletonSequence(np.where(valid[None], coords, 0), valid)
    from bodyhand.skeleton import build_combined_topology
    topo = build_combined_topology()
    for fn in (center_body, center_hand):
        out = fn(seq, topo)
        for t in range(2):
            # distances within each centered group are unchanged
            for group in (range(25), range(25, 46), range(46, 67)):
                g = list(group)
                d0 = pairwise(seq.coords[:, t][:, g])
                d1 = pairwise(out.coords[:, t][:, g])
                assert np.max(np.abs(d0 - d1)) <= 1e-12 * max(1.0, d0.max())


# --- canonical transform ------------------------------------------------------------


def test_canonical_wrist_at_origin_and_rotation_invariance():
    rng = np.random.default_rng(0)
    hand = hand_sequence(T=4)
    out, flagged = canonical_transform(hand)
    assert not flagged.any()
    assert np.abs(out.coords[:, :, HAND_WRIST]).max() <= 1e-15
    R = random_rotation(rng)
    moved = hand.with_data(np.einsum("ij,jtv->itv", R, hand.coords) + rng.normal(size=(3, 1, 1)))
    out2, _ = canonical_transform(moved)
    assert np.max(np.abs(out2.coords - out.coords)) <= 1e-9


def test_canonical_axes_by_hand():
    # wrist at origin, middle-MCP on +x, index/pinky spanning the x-y plane
    coords = np.zeros((3, 1, 21))
    coords[:, 0, HAND_MIDDLE_MCP] = [2.0, 0, 0]
    coords[:, 0, HAND_INDEX_MCP] = [1.0, 1.0, 0]
    coords[:, 0, HAND_PINKY_MCP] = [1.0, -1.0, 0]
    coords[:, 0, 20] = [0.5, 0.25, 3.0]
    hand = SkeletonSequence(coords, np.ones((1, 21), bool), topology_name="hand")
    out, flagged = canonical_transform(hand)
    # u = +x; n = (1,1,0) x (1,-1,0) = (0,0,-2) -> -z; third = u x n = x cross -z = +y
    assert np.allclose(out.coords[:, 0, 20], [0.5, -3.0, 0.25], atol=1e-15)
    assert not flagged.any()


def test_canonical_degenerate_and_missing_anchor_frames_pass_through():
    coords = np.zeros((3, 2, 21))
    coords[0, :, :] = np.arange(21)  # all joints on a line: degenerate
    valid = np.ones((2, 21), bool)
    valid[1, HAND_INDEX_MCP] = False
    coords[:, 1, HAND_INDEX_MCP] = 0
    hand = SkeletonSequence(coords, valid, topology_name="hand")
    out, flagged = canonical_transform(hand)
    assert flagged.tolist() == [True, True]
    assert out == hand


def test_canonical_noise_propagates_only_in_canonical_space():
    hand = hand_sequence(T=1, seed=5)
    eps = 0.01
    bumped = hand.coords.copy()
    bumped[0, 0, HAND_INDEX_MCP] += eps
    others = [j for j in range(21) if j != HAND_INDEX_MCP]
    native = np.abs(bumped[:, :, others] - hand.coords[:, :, others]).max()
    assert native == 0.0
    c0, _ = canonical_transform(hand)
    c1, _ = canonical_transform(hand.with_data(bumped))
    assert np.abs(c1.coords[:, :, others] - c0.coords[:, :, others]).max() > 1e-4


# --- pipeline -------------------------------------------------------------------------


def test_pipeline_output_length_and_validity(combined):
    split = generate_dataset(SynthConfig(samples_per_class=1, T=50), "train")
    for T_out in (32, 64, 80):
        cfg = PreprocessConfig(target_length=T_out)
        for seq in split.sequences:
            out = run_pipeline(seq, cfg, combined)
            assert out.T == T_out
            assert validate_sequence(out, combined) == []


def test_pipeline_default_skips_canonical(combined, monkeypatch):
    import bodyhand.preprocess as pp
    calls = []
    monkeypatch.setattr(pp, "canonical_all_hands", lambda s, t: calls.append(1) or (s, None))
    seq = make_sequence(T=8)
    pp.run_pipeline(seq, PreprocessConfig(target_length=8), combined)
    assert calls == []
    pp.run_pipeline(seq, PreprocessConfig(target_length=8, canonical=True), combined)
    assert calls == [1]


def test_pipeline_idempotent_at_target_length(combined):
    seq = generate_dataset(SynthConfig(samples_per_class=1, T=64), "train").sequences[4]
    cfg = PreprocessConfig(target_length=64)
    once = run_pipeline(seq, cfg, combined)
    twice = run_pipeline(once, cfg, combined)
    assert np.array_equal(once.valid, twice.valid)
    assert np.max(np.abs(once.coords - twice.coords)) <= 1e-12


def test_pipeline_is_deterministic(combined):
    seq = generate_dataset(SynthConfig(samples_per_class=1, T=90), "train").sequences[2]
    cfg = PreprocessConfig(target_length=64, canonical=True)
    a, b = run_pipeline(seq, cfg, combined), run_pipeline(seq, cfg, combined)
    assert a.coords.tobytes() == b.coords.tobytes()
    assert a.valid.tobytes() == b.valid.tobytes()


def test_pipeline_rejects_wrong_topology():
    with pytest.raises(SkeletonError):
        run_pipeline(make_sequence(V=25, topology_name="body"), PreprocessConfig(), build_hand_topology())


def test_config_invariants():
    with pytest.raises(SkeletonError):
        PreprocessConfig(target_length=1)
    with pytest.raises(SkeletonError):
        PreprocessConfig(max_gap=-1)
    assert PreprocessConfig(centering="none").centering is Centering.NONE
