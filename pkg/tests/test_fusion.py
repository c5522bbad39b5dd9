import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bodyhand import fusion
from bodyhand.fusion import (
    FusionScores,
    LossWeights,
    loss_complementary,
    loss_individual,
    loss_noisy_or,
    loss_terms,
    loss_total,
    noisy_or,
    predict,
    softmax_cross_entropy,
)
from bodyhand.gradcheck import check
from bodyhand.nnet import ConfigError, ModelSpec, ParamStore, Tensor, backward, forward

prob = st.floats(0.0, 1.0)


def ce_oracle(logits, labels):
    """Scalar re-derivation: log-sum-exp with math, one sample at a time."""
    total = 0.0
    for row, y in zip(np.asarray(logits, dtype=float), labels):
        m = max(row)
        total += m + math.log(sum(math.exp(v - m) for v in row)) - row[y]
    return total / len(labels)


def branch_logits(seed, names=("BI", "HI", "BE", "HE"), n=3, K=4):
    rng = np.random.default_rng(seed)
    return {b: Tensor(rng.normal(size=(n, K))) for b in names}, rng.integers(0, K, n)


# --- softmax CE ------------------------------------------------------------------


def test_softmax_ce_examples():
    assert softmax_cross_entropy(np.zeros((2, 4)), [1, 3]).item() == pytest.approx(math.log(4), abs=1e-15)
    confident = np.zeros((1, 3))
    confident[0, 2] = 1e6
    assert softmax_cross_entropy(confident, [2]).item() == pytest.approx(0.0, abs=1e-12)
    assert softmax_cross_entropy(np.array([[1.0, 0.0]]), [0]).item() == pytest.approx(
        -math.log(math.e / (math.e + 1)), abs=1e-15)
    assert -math.log(math.e / (math.e + 1)) == pytest.approx(0.313261687518, abs=1e-12)


def test_softmax_ce_rejects_bad_labels():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((1, 3)), [3])
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 3)), [0])


@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.lists(st.integers(0, 4), min_size=3, max_size=3))
def test_softmax_ce_matches_scalar_oracle(logits, labels):
    assert softmax_cross_entropy(logits, labels).item() == pytest.approx(ce_oracle(logits, labels), abs=1e-12)


# --- individual / complementary ---------------------------------------------------------


def test_individual_examples():
    l = {"BI": np.zeros((2, 4)), "HI": np.zeros((2, 4))}
    assert loss_individual(l, [0, 1]).item() == pytest.approx(2 * math.log(4), abs=1e-14)
    sure = np.full((1, 4), -1e6)
    sure[0, 1] = 1e6
    assert loss_individual({"BI": sure, "HI": sure}, [1]).item() == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 10**6))
def test_individual_and_complementary_match_oracle(seed):
    l, y = branch_logits(seed)
    d = {k: v.data for k, v in l.items()}
    assert loss_individual(l, y, "E").item() == pytest.approx(ce_oracle(d["BI"], y) + ce_oracle(d["HI"], y), abs=1e-12)
    assert loss_individual(l, y, "B").item() == pytest.approx(ce_oracle(d["BE"], y) + ce_oracle(d["HE"], y), abs=1e-12)
    avg4 = (d["BI"] + d["HI"] + d["BE"] + d["HE"]) / 4
    assert loss_complementary(l, y, "E").item() == pytest.approx(ce_oracle(avg4, y), abs=1e-12)
    avg2 = (d["BI"] + d["HI"]) / 2
    assert loss_complementary(l, y, "P").item() == pytest.approx(ce_oracle(avg2, y), abs=1e-12)


def test_complementary_examples():
    x = np.random.default_rng(0).normal(size=(2, 4))
    assert loss_complementary({"BI": x, "HI": x}, [0, 2]).item() == pytest.approx(ce_oracle(x, [0, 2]), abs=1e-12)
    assert loss_complementary({"BI": x, "HI": -x}, [0, 2]).item() == pytest.approx(math.log(4), abs=1e-12)


def test_missing_branch_is_config_error():
    with pytest.raises(ConfigError):
        loss_individual({"BI": np.zeros((1, 2))}, [0], "P")
    with pytest.raises(ConfigError):
        loss_noisy_or({"BI": np.zeros((1, 2)), "HI": np.zeros((1, 2))}, "E", [0])


# --- noisy-or ------------------------------------------------------------------------------


def test_noisy_or_examples():
    assert noisy_or([[0.6], [0.5]]).per_class[0] == pytest.approx(0.8, abs=1e-12)
    p = np.array([0.1, 0.7])
    assert np.max(np.abs(noisy_or([p, np.zeros(2)]).per_class - p)) <= 1e-12
    assert np.array_equal(noisy_or([p, np.ones(2)]).per_class, np.ones(2))


def test_noisy_or_rejects_out_of_range_and_bad_shapes():
    with pytest.raises(ValueError):
        noisy_or([[1.2], [0.5]])
    with pytest.raises(ValueError):
        noisy_or([[0.2, 0.1], [0.5]])
    with pytest.raises(ValueError):
        FusionScores(np.array([-0.1]))


@given(st.lists(prob, min_size=1, max_size=6))
def test_noisy_or_bounds_and_permutation(ps):
    r = noisy_or([[p] for p in ps]).per_class[0]
    assert 0.0 <= r <= 1.0
    assert noisy_or([[p] for p in reversed(ps)]).per_class[0] == pytest.approx(r, abs=1e-12)
    assert r >= max(ps) - 1e-12


@given(prob, prob, prob)
def test_noisy_or_associative(a, b, c):
    left = noisy_or([noisy_or([[a], [b]]), [c]]).per_class[0]
    right = noisy_or([[a], noisy_or([[b], [c]])]).per_class[0]
    flat = noisy_or([[a], [b], [c]]).per_class[0]
    assert abs(left - right) <= 1e-12 and abs(left - flat) <= 1e-12


@given(prob, prob, prob)
def test_noisy_or_monotone(a, b, c):
    lo, hi = min(a, b), max(a, b)
    assert noisy_or([[lo], [c]]).per_class[0] <= noisy_or([[hi], [c]]).per_class[0] + 1e-15


@given(prob, st.integers(1, 12))
def test_noisy_or_closed_form(p, n):
    assert noisy_or([[p]] * n).per_class[0] == pytest.approx(1 - (1 - p) ** n, abs=1e-12)


def test_noisy_or_loss_examples():
    zeros = {"BE": np.zeros((2, 5)), "HE": np.zeros((2, 5))}
    assert loss_noisy_or(zeros, "E", [0, 4]).item() == pytest.approx(math.log(5), abs=1e-14)
    strong = np.full((1, 3), -40.0)
    strong[0, 0] = 40.0
    none = np.full((1, 3), -40.0)  # sigmoid ~ 0 on every class: identity element
    single = softmax_cross_entropy(Tensor(strong).sigmoid(), [0]).item()
    assert loss_noisy_or({"BE": strong, "HE": none}, "B", [0]).item() == pytest.approx(single, abs=1e-12)


def test_noisy_or_loss_uses_variant_mapping():
    l, y = branch_logits(5)
    d = {k: v.data for k, v in l.items()}

    def oracle(a, b):
        p = 1 - (1 - 1 / (1 + np.exp(-a))) * (1 - 1 / (1 + np.exp(-b)))
        return ce_oracle(p, y)
    assert loss_noisy_or(l, "E", y).item() == pytest.approx(oracle(d["BE"], d["HE"]), abs=1e-12)
    assert loss_noisy_or(l, "B", y).item() == pytest.approx(oracle(d["BE"], d["HE"]), abs=1e-12)
    assert loss_noisy_or(l, "P", y).item() == pytest.approx(oracle(d["BI"], d["HI"]), abs=1e-12)


def test_noisy_or_loss_gradient():
    l, y = branch_logits(6, ("BE", "HE"))
    results = check(lambda: loss_noisy_or(l, "B", y), list(l.values()))
    assert max(r.error for r in results) < 1e-4


# --- total -----------------------------------------------------------------------------------


def test_total_weight_examples():
    l, y = branch_logits(7)
    assert loss_total(l, "E", y, LossWeights(1, 0, 0)).item() == loss_individual(l, y, "E").item()
    assert loss_total(l, "E", y, LossWeights(0, 0, 1)).item() == loss_noisy_or(l, "E", y).item()
    full = loss_total(l, "E", y, LossWeights(1, 1, 1)).item()
    parts = loss_individual(l, y, "E").item() + loss_complementary(l, y, "E").item() + loss_noisy_or(l, "E", y).item()
    assert full == pytest.approx(parts, abs=1e-12)
    terms = loss_terms(l, "E", y, LossWeights(2, 0.5, 0))
    assert set(terms) == {"idv", "cpl", "total"}


@given(st.integers(0, 10**6), st.floats(0, 3), st.floats(0, 3), st.floats(0.01, 3))
def test_total_is_non_negative(seed, a, b, c):
    l, y = branch_logits(seed)
    assert loss_total(l, "E", y, LossWeights(a, b, c)).item() >= 0


def test_loss_weights_invariants():
    with pytest.raises(ConfigError):
        LossWeights(0, 0, 0)
    with pytest.raises(ConfigError):
        LossWeights(-1, 1, 1)
    assert LossWeights() == LossWeights(1.0, 1.0, 1.0)


def test_noisy_or_gradient_skips_interactive_heads():
    spec = ModelSpec("E", channels=(4, 6), blocks=2, class_count=4, kernel_size=3)
    params = ParamStore.init(spec, 0)
    rng = np.random.default_rng(0)
    logits = forward(params, spec, rng.normal(size=(2, 3, 6, 25)), rng.normal(size=(2, 3, 6, 21)))
    grads = backward(loss_noisy_or(logits, "E", [0, 3]), params)
    for name, g in grads.items():
        if name.startswith(("BI.", "HI.")):
            assert np.all(g == 0), name
    assert np.any(grads["BE.head.W"] != 0) and np.any(grads["HE.head.W"] != 0)


# --- predict ----------------------------------------------------------------------------------


def test_predict_examples():
    a = np.array([[0.1, 0.9, 0.3]])
    assert predict({"BE": a}).tolist() == [1]
    b = np.array([[0.0, -0.5, 1.0]])
    assert predict({"BE": a, "HE": b}).tolist() == [2]
    assert predict({"BE": np.zeros((1, 3))}).tolist() == [0]  # ties -> lowest index


@given(st.integers(0, 10**6), st.floats(-100, 100), st.permutations(["BI", "HI", "BE", "HE"]))
def test_predict_invariances(seed, c, order):
    l, _ = branch_logits(seed, n=5)
    base = predict(l)
    shifted = dict(l)
    shifted["HE"] = Tensor(l["HE"].data + c)
    assert np.array_equal(predict(shifted), base)
    assert np.array_equal(predict({k: l[k] for k in order}), base)
    assert np.array_equal(fusion.order_free_sum([l[k].data for k in order]),
                          fusion.order_free_sum([l[k].data for k in l]))
