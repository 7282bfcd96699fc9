"""Ordinal survival prompts via distance-weighted interpolation.

C class prompts are built from B learnable base prompts (B << C): each
class interpolates the base token tensors with convex weights that decay
linearly in the ordering distance, then the shared learnable context is
prepended and the result encoded to a unit-norm embedding.  The non-ordinal
mode instead gives every class its own independent token tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .embeddings import PseudoEncoder, pseudo_encode


@dataclass
class PromptParams:
    """Learnable context tokens plus base (or per-class) class tokens."""

    context_tokens: ad.Tensor  # (L_ctx, token_dim)
    class_tokens: list  # B tensors (ordinal) or C tensors, each (L_cls, token_dim)
    num_classes: int
    ordinal: bool = True
    phrases: dict = field(default_factory=dict)  # initialization metadata only

    def __post_init__(self):
        if self.context_tokens.shape[0] < 1:
            raise ValueError("context needs at least one token row")
        if not self.class_tokens:
            raise ValueError("no class token tensors")
        expected = len(self.class_tokens) if not self.ordinal else None
        if self.ordinal and len(self.class_tokens) < 2:
            raise ValueError("ordinal mode needs at least 2 base class prompts")
        if not self.ordinal and len(self.class_tokens) != self.num_classes:
            raise ValueError(
                f"non-ordinal mode needs one token tensor per class "
                f"({expected} != C={self.num_classes})"
            )

    @property
    def num_bases(self) -> int:
        return len(self.class_tokens)


def default_distance(num_classes: int, num_bases: int) -> np.ndarray:
    """Ordering distances D[c,b] = |(c-1) - (b-1)*(C-1)/(B-1)| as a (C, B) matrix."""
    if num_bases < 2:
        raise ValueError("need at least 2 base prompts (distance formula divides by B-1)")
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    c = np.arange(num_classes)[:, None]
    b = np.arange(num_bases)[None, :]
    return np.abs(c - b * (num_classes - 1) / (num_bases - 1))


def interpolation_weights(distance: np.ndarray, num_classes: int) -> np.ndarray:
    """Row-stochastic weights W[c,b] = (1 - D[c,b]/(C-1)) / row sum.

    Raw weights are floored at zero so rows stay convex for out-of-range
    custom distances (the default distance never exceeds C-1).
    """
    distance = np.asarray(distance, dtype=float)
    if np.any(distance < 0):
        raise ValueError("distances must be nonnegative")
    raw = np.clip(1.0 - distance / (num_classes - 1), 0.0, None)
    sums = raw.sum(axis=1, keepdims=True)
    if np.any(sums <= 0.0):
        row = int(np.argmin(sums))
        raise ValueError(f"degenerate interpolation row {row}: weights sum to 0")
    return raw / sums


def class_prompt_tokens(params: PromptParams, weights=None) -> list:
    """Token tensor for each of the C classes.

    Ordinal: convex combinations of the base tensors under `weights`
    (default interpolation weights if omitted).  Non-ordinal: each class
    already owns its tensor.
    """
    if not params.ordinal:
        return list(params.class_tokens)
    if weights is None:
        weights = interpolation_weights(
            default_distance(params.num_classes, params.num_bases), params.num_classes
        )
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (params.num_classes, params.num_bases):
        raise ValueError(
            f"weights shape {weights.shape} != ({params.num_classes}, {params.num_bases})"
        )
    out = []
    for c in range(params.num_classes):
        acc = weights[c, 0] * params.class_tokens[0]
        for b in range(1, params.num_bases):
            acc = acc + weights[c, b] * params.class_tokens[b]
        out.append(acc)
    return out


def survival_prompts(params: PromptParams, encoder) -> ad.Tensor:
    """Stack of C unit-norm prompt embeddings, one per survival class.

    `encoder` is either a PseudoEncoder (tokens are concatenated with the
    context and encoded) or a precomputed (C, D) table, in which case the
    rows are normalized and returned as constants.
    """
    if not isinstance(encoder, PseudoEncoder):
        table = np.asarray(encoder, dtype=np.float64)
        if table.ndim != 2 or table.shape[0] != params.num_classes:
            raise ValueError(
                f"precomputed prompt table must be ({params.num_classes}, D)"
            )
        norms = np.linalg.norm(table, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("zero row in precomputed prompt table")
        return ad.Tensor(table / norms)
    tokens = class_prompt_tokens(params)
    rows = [
        pseudo_encode(encoder, ad.concat([params.context_tokens, tok], axis=0))
        for tok in tokens
    ]
    return ad.stack_rows(rows)


@dataclass(frozen=True)
class OrdinalityReport:
    similarity: np.ndarray  # (C, C) pairwise cosine
    ranking_accuracy: float  # nan when no comparable triples
    comparable_triples: int
    correct_triples: int


def prompt_ordinality_report(prompt_matrix) -> OrdinalityReport:
    """Pairwise similarity heatmap and ranking accuracy of the prompts.

    A triple (c, i, j) with i, j != c and |c-i| < |c-j| is ranked correctly
    when cos(f_c, f_i) > cos(f_c, f_j).  Exact similarity ties are excluded
    from the comparable count (all-identical prompts yield zero triples).
    """
    f = np.asarray(prompt_matrix, dtype=float)
    C = f.shape[0]
    if C < 3:
        raise ValueError("ordinality needs at least 3 prompts")
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("zero prompt row")
    sim = (f / norms) @ (f / norms).T
    comparable = correct = 0
    for c in range(C):
        for i in range(C):
            if i == c:
                continue
            for j in range(C):
                if j == c or j == i:
                    continue
                if abs(c - i) >= abs(c - j):
                    continue
                if sim[c, i] == sim[c, j]:
                    continue
                comparable += 1
                if sim[c, i] > sim[c, j]:
                    correct += 1
    acc = correct / comparable if comparable else float("nan")
    return OrdinalityReport(
        similarity=sim,
        ranking_accuracy=acc,
        comparable_triples=comparable,
        correct_triples=correct,
    )
