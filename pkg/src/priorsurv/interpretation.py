"""Exact Shapley attribution of the predicted risk to each prognostic prior.

The coalition value is the risk produced by fusing only the selected
pooled rows; the empty coalition maps to the uniform prediction (risk
(C+1)/2).  All 2^M coalitions are enumerated, so contributions satisfy the
efficiency, symmetry, and dummy-player axioms up to float rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .aggregation import LinearHead, pooling_weights, subset_fuse
from .prediction import incidence, risk_score

MAX_EXACT_PRIORS = 20


@dataclass(frozen=True)
class ShapleyReport:
    contributions: np.ndarray  # (M,)
    baseline_risk: float
    full_risk: float
    prior_texts: list

    @property
    def total(self) -> float:
        return float(self.contributions.sum())


def coalition_risk(pooled, subset, head: LinearHead, prompt_matrix, tau) -> float:
    """Risk of the prediction made from a subset of the pooled prior rows."""
    with ad.no_grad():
        f_image = subset_fuse(pooled, subset, head)
        return risk_score(incidence(f_image.value, prompt_matrix, tau))


def shapley_exact(pooled, head: LinearHead, prompt_matrix, tau, grid=None,
                  prior_texts=None) -> ShapleyReport:
    """Exact Shapley values of the risk over the M pooled prior rows.

    `pooled` is the (M, D) matrix of per-prior bag representations; it is
    computed once and reused, so each coalition costs only the fuse and
    scoring stages.  Enumeration is exact and refuses M > 20.
    """
    pooled = np.asarray(ad.astensor(pooled).value, dtype=np.float64)
    m_count = pooled.shape[0]
    if m_count > MAX_EXACT_PRIORS:
        raise ValueError(
            f"coalition enumeration too large: M={m_count} > {MAX_EXACT_PRIORS}"
        )
    values = np.empty(2**m_count)
    members = [np.flatnonzero([(mask >> i) & 1 for i in range(m_count)])
               for mask in range(2**m_count)]
    for mask in range(2**m_count):
        values[mask] = coalition_risk(pooled, members[mask], head, prompt_matrix, tau)
    fact = [math.factorial(i) for i in range(m_count + 1)]
    denom = fact[m_count]
    phi = np.zeros(m_count)
    for mask in range(2**m_count):
        size = len(members[mask])
        weight = fact[size] * fact[m_count - size - 1] / denom if size < m_count else 0.0
        for i in range(m_count):
            if not (mask >> i) & 1:
                phi[i] += weight * (values[mask | (1 << i)] - values[mask])
    return ShapleyReport(
        contributions=phi,
        baseline_risk=float(values[0]),
        full_risk=float(values[-1]),
        prior_texts=list(prior_texts) if prior_texts else [f"prior_{i}" for i in range(m_count)],
    )


def top_instances(priors_eff, bag, alpha, prior_index: int, top_k: int):
    """Instances ranked by their pooling weight for one prior.

    Returns (indices, weights) sorted by weight descending, ties broken by
    instance index.
    """
    weights = pooling_weights(priors_eff, bag, alpha)
    m_count, k_count = weights.shape
    if not 0 <= prior_index < m_count:
        raise ValueError(f"prior index {prior_index} outside [0, {m_count})")
    if not 1 <= top_k <= k_count:
        raise ValueError(f"top_k must lie in [1, {k_count}]")
    row = weights[prior_index]
    order = np.argsort(-row, kind="stable")[:top_k]
    return order, row[order]
