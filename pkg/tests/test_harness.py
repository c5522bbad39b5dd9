import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bodyhand import harness
from bodyhand.fusion import LossWeights
from bodyhand.nnet import ConfigError, ModelSpec, ParamStore
from bodyhand.preprocess import PreprocessConfig
from bodyhand.skeleton import DatasetSplit, SkeletonError
from bodyhand.synthgen import SynthConfig, generate_dataset

from conftest import make_sequence

TINY_SYNTH = SynthConfig(body_motifs=2, hand_motifs=2, samples_per_class=5, T=16, seed=0)
TINY_SPEC = ModelSpec("E", (4, 8), 2, 4, kernel_size=3)


@pytest.fixture(scope="module")
def tiny(combined):
    pcfg = PreprocessConfig(target_length=16)
    train = harness.preprocess_split(generate_dataset(TINY_SYNTH, "train"), pcfg, combined)
    return train


@pytest.fixture(scope="module")
def tiny_trained(tiny, combined):
    cfg = harness.TrainConfig(pretrain_epochs=2, finetune_epochs=2, seed=0)
    body, bspec, brep = harness.pretrain_stream(tiny, "body", cfg, TINY_SPEC, combined)
    hand, hspec, _ = harness.pretrain_stream(tiny, "hand", cfg, TINY_SPEC, combined)
    params, dspec, drep = harness.finetune_dual(tiny, body, hand, TINY_SPEC, LossWeights(), cfg, combined)
    return {"body": body, "bspec": bspec, "brep": brep, "params": params, "dspec": dspec, "drep": drep,
            "hand": hand, "cfg": cfg}


# --- frame drop ----------------------------------------------------------------


def test_frame_drop_rate_zero_is_identity():
    seq = make_sequence(T=10)
    assert harness.frame_drop(seq, 0.0, 1) is seq


def test_frame_drop_half_of_64_frames():
    seq = make_sequence(T=64)
    out = harness.frame_drop(seq, 0.5, 4)
    dropped = ~out.valid.any(axis=1)
    assert dropped.sum() == 32
    assert np.all(out.coords[:, dropped] == 0)
    assert out.T == 64


@given(st.floats(0.0, 0.95), st.integers(0, 10_000), st.integers(2, 40))
def test_frame_drop_count_and_valid_delta(rate, seed, T):
    seq = make_sequence(T=T, V=5, topology_name="body")
    out = harness.frame_drop(seq, rate, seed)
    n = math.ceil(rate * T)
    assert (~out.valid.any(axis=1)).sum() == n
    assert seq.valid.sum() - out.valid.sum() == n * 5


def test_frame_drop_seeded_and_distinct():
    seq = make_sequence(T=64)
    a = harness.frame_drop(seq, 0.25, 9)
    b = harness.frame_drop(seq, 0.25, 9)
    assert np.array_equal(a.valid, b.valid)
    sets = {tuple(np.flatnonzero(~harness.frame_drop(seq, 0.25, s).valid.any(axis=1))) for s in range(100)}
    assert len(sets) == 100


def test_frame_drop_hand_scope_keeps_body(combined):
    from bodyhand.skeleton import stream_joints
    seq = make_sequence(T=8)
    out = harness.frame_drop(seq, 0.5, 0, scope="hand", topo=combined)
    body_idx, hand_idx = stream_joints(combined)
    assert np.array_equal(out.valid[:, body_idx], seq.valid[:, body_idx])
    assert (~out.valid[:, hand_idx].any(axis=1)).sum() == 4


@pytest.mark.parametrize("rate", [-0.1, 1.0])
def test_frame_drop_rejects_rate(rate):
    with pytest.raises(ValueError):
        harness.frame_drop(make_sequence(), rate, 0)


# --- metrics -------------------------------------------------------------------


def test_metrics_all_correct():
    rep = harness.metrics_report([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert rep["overall"] == 1.0
    assert rep["per_class"] == [1.0, 1.0, 1.0]


def test_metrics_empty_class_undefined(tmp_path):
    rep = harness.metrics_report([0, 0, 1], [0, 1, 1], 3)
    assert rep["per_class"][2] is None
    assert rep["confusion"] == [[1, 0, 0], [1, 1, 0], [0, 0, 0]]
    path = tmp_path / "m.csv"
    harness.write_metrics_csv(rep, path)
    rows = list(csv.reader(open(path)))
    assert rows[3] == ["2", "0", "undefined"]


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=50))
def test_metrics_support_weighted_mean_is_overall(pairs):
    pred, lab = zip(*pairs)
    rep = harness.metrics_report(pred, lab, 4)
    weighted = sum(a * n for a, n in zip(rep["per_class"], rep["support"]) if a is not None) / len(lab)
    assert weighted == pytest.approx(rep["overall"], abs=1e-12)


def test_metrics_length_mismatch():
    with pytest.raises(ValueError):
        harness.metrics_report([0, 1], [0], 2)


# --- ensembles -----------------------------------------------------------------


def test_ensemble_intra_skeleton_formula():
    rng = np.random.default_rng(0)
    j, b, jm, bm = (rng.normal(size=(5, 3)) for _ in range(4))
    out = harness.ensemble_logits(harness.INTRA_SKELETON, [j, b, jm, bm])
    assert np.allclose(out, 2 * (j + b) + (jm + bm), rtol=0, atol=1e-12)


def test_ensemble_single_identity():
    x = np.random.default_rng(1).normal(size=(4, 6))
    assert np.array_equal(harness.ensemble_logits(harness.EnsembleSpec.parse("J:1"), [x]), x)


def test_ensemble_permutation_invariant():
    rng = np.random.default_rng(2)
    logits = [rng.normal(size=(6, 4)) for _ in range(5)]
    spec = harness.FIVE_STREAM
    perm = [3, 0, 4, 1, 2]
    pspec = harness.EnsembleSpec(tuple(spec.entries[i] for i in perm))
    assert np.array_equal(harness.ensemble_logits(spec, logits),
                          harness.ensemble_logits(pspec, [logits[i] for i in perm]))


def test_ensemble_shape_mismatch_names_tag():
    with pytest.raises(ValueError, match="JM"):
        harness.ensemble_logits(harness.INTRA_SKELETON, [np.zeros((2, 3))] * 2 + [np.zeros((2, 4)), np.zeros((2, 3))])


@pytest.mark.parametrize("text", ["", "X:1", "J:abc", "J:nan"])
def test_ensemble_spec_rejects(text):
    with pytest.raises(ConfigError):
        harness.EnsembleSpec.parse(text)


def test_weight_sweep_full_factorial_and_baseline():
    rng = np.random.default_rng(3)
    logits = [rng.normal(size=(20, 3)) for _ in range(4)]
    labels = rng.integers(0, 3, 20)
    rows = harness.weight_perturbation_sweep(harness.INTRA_SKELETON, logits, labels)
    assert len(rows) == 3 ** 4
    assert len({s for s, _ in rows}) == 81
    base = np.mean(np.argmax(harness.ensemble_logits(harness.INTRA_SKELETON, logits), 1) == labels)
    assert dict(rows)[(1.0, 1.0, 1.0, 1.0)] == base
    for c in (0.5, 1.5):
        assert dict(rows)[(c,) * 4] == base


def test_weight_sweep_rejects_nonpositive():
    with pytest.raises(ValueError):
        harness.weight_perturbation_sweep(harness.INTRA_SKELETON, [np.zeros((1, 2))] * 4, [0], (0.0, 1.0))


# --- gradient clipping ---------------------------------------------------------


def test_clip_gradients_scales_joint_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    out = harness.clip_gradients(g, 1.0)
    assert out["a"] == pytest.approx([0.6, 0.0])
    assert out["b"][0, 0] == pytest.approx(0.8)
    assert harness.clip_gradients(g, 5.0) is g
    assert harness.clip_gradients(g, None) is g


# --- training / evaluation -----------------------------------------------------


def test_pretrain_rejects_empty_split(combined):
    with pytest.raises(SkeletonError):
        harness.pretrain_stream(DatasetSplit([], 4, "train"), "body", harness.TrainConfig(), TINY_SPEC, combined)
    with pytest.raises(SkeletonError):
        harness.pretrain_stream(None, "body", harness.TrainConfig(), TINY_SPEC, combined)


def test_pretrain_rejects_bad_stream(tiny, combined):
    with pytest.raises(ConfigError):
        harness.pretrain_stream(tiny, "face", harness.TrainConfig(), TINY_SPEC, combined)


def test_two_epochs_complete_with_finite_losses(tiny_trained):
    for rep in (tiny_trained["brep"], tiny_trained["drep"]):
        losses = [e["L_total"] for e in rep.epochs]
        assert len(losses) == 2 and all(math.isfinite(v) for v in losses)


def test_training_reduces_loss(tiny, combined):
    # two epochs on 20 samples sit on the chance plateau; 15/10 epochs leave it
    cfg = harness.TrainConfig(pretrain_epochs=15, finetune_epochs=10, seed=0)
    spec = ModelSpec("E", (8, 16), 2, 4, kernel_size=3)
    body, _, rb = harness.pretrain_stream(tiny, "body", cfg, spec, combined)
    hand, _, rh = harness.pretrain_stream(tiny, "hand", cfg, spec, combined)
    _, _, rd = harness.finetune_dual(tiny, body, hand, spec, LossWeights(), cfg, combined)
    for rep in (rb, rh, rd):
        assert rep.epochs[-1]["L_total"] < rep.epochs[0]["L_total"]


def test_training_bitwise_deterministic(tiny, combined, tiny_trained):
    cfg = tiny_trained["cfg"]
    body, _, _ = harness.pretrain_stream(tiny, "body", cfg, TINY_SPEC, combined)
    for name in body:
        assert np.array_equal(body[name].data, tiny_trained["body"][name].data)
    params, _, _ = harness.finetune_dual(tiny, body, tiny_trained["hand"], TINY_SPEC, LossWeights(), cfg, combined)
    for name in params:
        assert np.array_equal(params[name].data, tiny_trained["params"][name].data)


def test_finetune_shape_mismatch(tiny, combined, tiny_trained):
    wider = ModelSpec("E", (8, 16), 2, 4, kernel_size=3)
    with pytest.raises(ConfigError):
        harness.finetune_dual(tiny, tiny_trained["body"], tiny_trained["hand"], wider, LossWeights(),
                              tiny_trained["cfg"], combined)


def test_evaluate_side_effect_free_and_deterministic(tiny, combined, tiny_trained):
    params, spec = tiny_trained["params"], tiny_trained["dspec"]
    before = {k: params[k].data.copy() for k in params}
    coords = [s.coords.copy() for s in tiny.sequences]
    a = harness.evaluate(params, spec, tiny, 0.5, 3, combined)
    b = harness.evaluate(params, spec, tiny, 0.5, 3, combined)
    assert a == b and 0 <= a <= 1
    assert all(np.array_equal(before[k], params[k].data) for k in params)
    assert all(np.array_equal(c, s.coords) for c, s in zip(coords, tiny.sequences))


def test_predict_threads_match_single(tiny, combined, tiny_trained):
    body, hand, _ = harness.stream_arrays(tiny, combined)
    p, s = tiny_trained["params"], tiny_trained["dspec"]
    one = harness.predict_arrays(p, s, body, hand, batch_size=4, threads=1)
    many = harness.predict_arrays(p, s, body, hand, batch_size=4, threads=4)
    assert np.array_equal(one, many)


def test_constant_model_accuracy_is_one_over_k(tiny, combined):
    spec = ModelSpec("E", (4, 8), 2, 4, kernel_size=3)
    params = ParamStore.init(spec, 0)
    for name in params:
        if name.endswith("head.W"):
            params[name].data[:] = 0
        elif name.endswith("head.b"):
            params[name].data[:] = np.array([0, 0, 5, 0], dtype=params[name].data.dtype)
    assert harness.evaluate(params, spec, tiny, 0.0, 0, combined) == pytest.approx(1 / 4)


def test_robustness_sweep_report(tmp_path, tiny, combined, tiny_trained):
    p, s = tiny_trained["params"], tiny_trained["dspec"]
    rep = harness.robustness_sweep(p, s, tiny, combined, seeds=(0, 1))
    assert list(rep.accuracy) == [0.0, 0.25, 0.5]
    assert rep.accuracy[0.0] == harness.evaluate(p, s, tiny, 0.0, 0, combined)
    rep.write_csv(tmp_path / "r.csv", "E")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["series", "rate", "accuracy", "seeds"]
    assert [r[1] for r in rows[1:]] == ["0.0", "0.25", "0.5"]
