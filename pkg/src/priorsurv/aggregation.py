"""Bag-level representations from instance features.

Three aggregators are provided: similarity pooling guided by a set of
text-derived prior embeddings (the main method), classic gated attention
pooling, and the learnable-prototype variant (prior pooling with a fully
learnable query matrix).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

PRIOR_GUIDED = "prior"
ATTENTION = "attention"
PROTOTYPES = "prototypes"
KINDS = (PRIOR_GUIDED, ATTENTION, PROTOTYPES)


@dataclass
class AggregatorConfig:
    kind: str = PRIOR_GUIDED
    alpha: float = 100.0
    attention_hidden: int = 128

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass
class PriorSet:
    """Frozen prior embeddings plus a learnable offset matrix of equal shape."""

    base_embeddings: np.ndarray
    offsets: ad.Tensor
    texts: list = field(default_factory=list)

    def __post_init__(self):
        base = np.asarray(self.base_embeddings, dtype=np.float64)
        if base.ndim != 2 or base.shape[0] < 1:
            raise ValueError("base_embeddings must be a nonempty (M, D) matrix")
        if tuple(self.offsets.shape) != base.shape:
            raise ValueError(
                f"offsets shape {self.offsets.shape} != base shape {base.shape}"
            )
        self.base_embeddings = base

    @property
    def count(self) -> int:
        return self.base_embeddings.shape[0]


@dataclass
class LinearHead:
    """Linear map v -> weight @ v + bias."""

    weight: ad.Tensor
    bias: ad.Tensor

    def apply(self, v):
        return ad.matmul(self.weight, v) + self.bias


@dataclass
class AttentionScorer:
    """Two-layer perceptron scorer: w . tanh(V x + b), one scalar per instance."""

    v_weight: ad.Tensor  # (hidden, D)
    v_bias: ad.Tensor  # (hidden,)
    w_weight: ad.Tensor  # (hidden,)


def effective_priors(priors: PriorSet) -> ad.Tensor:
    """Base embeddings plus offsets; gradient reaches only the offsets."""
    return ad.Tensor(priors.base_embeddings) + priors.offsets


def _check_nonzero_rows(value, what):
    norms = np.linalg.norm(value, axis=1)
    if np.any(norms == 0.0):
        row = int(np.argmin(norms))
        raise ValueError(f"zero vector in cosine: {what} row {row}")


def prior_guided_pool(priors_eff, bag, alpha) -> ad.Tensor:
    """One pooled row per prior: softmax over alpha-scaled cosine matches.

    Row m is sum_k x_k * softmax_k(alpha * cos(p_m, x_k)), a convex
    combination of the instance rows.
    """
    priors_eff = ad.astensor(priors_eff)
    bag = ad.astensor(bag)
    if bag.shape[0] < 1:
        raise ValueError("empty bag")
    _check_nonzero_rows(priors_eff.value, "prior")
    _check_nonzero_rows(bag.value, "instance")
    cos = ad.cosine_rows(priors_eff, bag)  # (M, K)
    weights = ad.softmax(float(alpha) * cos, axis=1)
    return ad.matmul(weights, bag)


def pooling_weights(priors_eff, bag, alpha) -> np.ndarray:
    """The (M, K) instance weights used by prior_guided_pool, as numpy."""
    with ad.no_grad():
        priors_eff = ad.astensor(priors_eff)
        bag = ad.astensor(bag)
        _check_nonzero_rows(priors_eff.value, "prior")
        _check_nonzero_rows(bag.value, "instance")
        cos = ad.cosine_rows(priors_eff, bag)
        return ad.softmax(float(alpha) * cos, axis=1).value


def fuse(pooled, head: LinearHead) -> ad.Tensor:
    """Average the pooled rows and apply the linear head."""
    pooled = ad.astensor(pooled)
    return head.apply(ad.mean_(pooled, axis=0))


def attention_pool(bag, scorer: AttentionScorer) -> ad.Tensor:
    """Gated attention pooling: softmax over per-instance MLP scores."""
    bag = ad.astensor(bag)
    if bag.shape[0] < 1:
        raise ValueError("empty bag")
    hidden = ad.tanh(ad.matmul(bag, ad.transpose(scorer.v_weight)) + scorer.v_bias)
    scores = ad.matmul(hidden, scorer.w_weight)  # (K,)
    weights = ad.softmax(scores, axis=0)
    return ad.matmul(weights, bag)


def subset_fuse(pooled, subset, head: LinearHead) -> ad.Tensor:
    """Mean of the selected pooled rows through the head.

    The empty subset returns the zero vector directly (no head), which the
    incidence stage maps to a uniform prediction: the canonical baseline for
    coalition games over the priors.
    """
    pooled = ad.astensor(pooled)
    subset = sorted(set(int(i) for i in subset))
    if not subset:
        return ad.Tensor(np.zeros(pooled.shape[1]))
    if subset[0] < 0 or subset[-1] >= pooled.shape[0]:
        raise ValueError(f"subset indices out of range [0, {pooled.shape[0]})")
    return head.apply(ad.mean_(ad.take(pooled, subset), axis=0))
