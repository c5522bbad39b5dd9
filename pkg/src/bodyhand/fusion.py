"""Individual, complementary and Noisy-OR losses with the per-variant branch mapping.

    variant   individual     complementary        noisy-or
    P         BI, HI         avg(BI, HI)          BI, HI
    E         BI, HI         avg(BI, HI, BE, HE)  BE, HE
    B         BE, HE         avg(BE, HE)          BE, HE
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .nnet.ops import ConfigError
from .nnet.tensor import Tensor, as_tensor, stack_sum

INDIVIDUAL_BRANCHES = {"P": ("BI", "HI"), "E": ("BI", "HI"), "B": ("BE", "HE")}
COMPLEMENTARY_BRANCHES = {"P": ("BI", "HI"), "E": ("BI", "HI", "BE", "HE"), "B": ("BE", "HE")}
NOISY_OR_BRANCHES = {"P": ("BI", "HI"), "E": ("BE", "HE"), "B": ("BE", "HE")}


@dataclass(frozen=True)
class LossWeights:
    lambda_idv: float = 1.0
    lambda_cpl: float = 1.0
    lambda_nor: float = 1.0

    def __post_init__(self):
        w = (self.lambda_idv, self.lambda_cpl, self.lambda_nor)
        if any(x < 0 or not np.isfinite(x) for x in w):
            raise ConfigError(f"loss weights must be finite and non-negative, got {w}")
        if not any(x > 0 for x in w):
            raise ConfigError("at least one loss weight must be positive")


@dataclass(frozen=True, eq=False)
class FusionScores:
    per_class: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.per_class, dtype=np.float64)
        if not ((arr >= 0) & (arr <= 1)).all():
            raise ValueError("fusion scores must lie in [0, 1]")
        object.__setattr__(self, "per_class", arr)


def _labels(labels, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K}), got {labels.min()}..{labels.max()}")
    return labels


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    n, K = logits.shape
    labels = _labels(labels, K)
    if labels.size != n:
        raise ValueError(f"{labels.size} labels for a batch of {n}")
    onehot = np.zeros((n, K), dtype=logits.data.dtype)
    onehot[np.arange(n), labels] = 1.0
    return -(logits.log_softmax(axis=1) * onehot).sum() * (1.0 / n)


def _pick(l: Mapping[str, Tensor], names: Sequence[str], what: str) -> list[Tensor]:
    missing = [b for b in names if b not in l]
    if missing:
        raise ConfigError(f"{what} needs branches {list(names)}, missing {missing}")
    return [as_tensor(l[b]) for b in names]


def _variant_of(l: Mapping[str, Tensor], variant: str | None) -> str:
    if variant is not None:
        if variant not in INDIVIDUAL_BRANCHES:
            raise ConfigError(f"unknown variant {variant!r}")
        return variant
    keys = set(l)
    if keys >= {"BI", "HI", "BE", "HE"}:
        return "E"
    if keys >= {"BI", "HI"}:
        return "P"
    return "B"


def loss_individual(l: Mapping[str, Tensor], labels, variant: str | None = None) -> Tensor:
    branches = _pick(l, INDIVIDUAL_BRANCHES[_variant_of(l, variant)], "individual loss")
    return stack_sum([softmax_cross_entropy(b, labels) for b in branches])


def loss_complementary(l: Mapping[str, Tensor], labels, variant: str | None = None) -> Tensor:
    branches = _pick(l, COMPLEMENTARY_BRANCHES[_variant_of(l, variant)], "complementary loss")
    return softmax_cross_entropy(stack_sum(branches) * (1.0 / len(branches)), labels)


def noisy_or(scores) -> FusionScores:
    """Element-wise 1 - prod(1 - p_i)."""
    arrays = [s.per_class if isinstance(s, FusionScores) else FusionScores(s).per_class for s in scores]
    if not arrays:
        raise ValueError("noisy_or needs at least one score set")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError(f"noisy_or inputs disagree on shape: {[a.shape for a in arrays]}")
    miss = np.ones(shape)
    for a in arrays:
        miss = miss * (1.0 - a)
    return FusionScores(1.0 - miss)


def noisy_or_tensor(probs: Sequence[Tensor]) -> Tensor:
    miss = 1.0 - probs[0]
    for p in probs[1:]:
        miss = miss * (1.0 - p)
    return 1.0 - miss


def loss_noisy_or(l: Mapping[str, Tensor], variant: str | None, labels) -> Tensor:
    branches = _pick(l, NOISY_OR_BRANCHES[_variant_of(l, variant)], "noisy-or loss")
    # scores in [0,1] go straight into softmax-CE, no renormalisation
    return softmax_cross_entropy(noisy_or_tensor([b.sigmoid() for b in branches]), labels)


def loss_terms(l: Mapping[str, Tensor], variant: str | None, labels, w: LossWeights) -> dict[str, Tensor]:
    """Weighted total plus the three unweighted terms (terms with zero weight are skipped)."""
    variant = _variant_of(l, variant)
    terms = {}
    parts = []
    if w.lambda_idv > 0:
        terms["idv"] = loss_individual(l, labels, variant)
        parts.append(terms["idv"] * w.lambda_idv)
    if w.lambda_cpl > 0:
        terms["cpl"] = loss_complementary(l, labels, variant)
        parts.append(terms["cpl"] * w.lambda_cpl)
    if w.lambda_nor > 0:
        terms["nor"] = loss_noisy_or(l, variant, labels)
        parts.append(terms["nor"] * w.lambda_nor)
    terms["total"] = stack_sum(parts)
    return terms


def loss_total(l: Mapping[str, Tensor], variant: str | None, labels, w: LossWeights | None = None) -> Tensor:
    return loss_terms(l, variant, labels, w or LossWeights())["total"]


def order_free_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Sum that does not depend on the order of ``arrays`` (sorted before reduction)."""
    stacked = np.stack([np.asarray(a, dtype=np.float64) for a in arrays])
    return np.sort(stacked, axis=0).sum(axis=0)


def predict(l) -> np.ndarray:
    """Argmax of the summed branch logits; ties go to the lowest class index."""
    items = list(l.values()) if isinstance(l, Mapping) else list(l)
    if not items:
        raise ValueError("predict needs at least one branch")
    arrays = [x.data if isinstance(x, Tensor) else np.asarray(x) for x in items]
    return np.argmax(order_free_sum(arrays), axis=1)
