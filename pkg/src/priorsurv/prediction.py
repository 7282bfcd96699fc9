"""Incidence-function prediction and derived survival quantities.

The image representation is scored against the C survival-prompt embeddings
by temperature-scaled cosine similarity; the softmax over the scores is the
predicted first-hitting distribution.  Cumulating it gives the CIF and
survival function, the CIF sum gives the risk scalar, and a midpoint
expectation over the time grid gives the predicted time-to-event.  A
sigmoid-based hazard head is included as the alternative prediction target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .labels import TimeGrid, time_to_class

TAU_MAX = 100.0


@dataclass(frozen=True)
class IncidenceResult:
    """Predicted first-hitting distribution and its derived quantities."""

    y_hat: np.ndarray
    cif: np.ndarray
    survival: np.ndarray
    risk: float
    expected_time: float | None = None

    @property
    def num_classes(self) -> int:
        return self.y_hat.shape[0]


@dataclass(frozen=True)
class HazardResult:
    hazards: np.ndarray
    survival: np.ndarray
    risk: float
    expected_time: float | None = None


def _cosine_scores(f_image, prompt_matrix) -> ad.Tensor:
    """cos(f_image, prompt_c) for every class; zero image vector scores 0."""
    prompt_matrix = ad.astensor(prompt_matrix)
    norms = np.linalg.norm(prompt_matrix.value, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"zero-norm prompt row {int(np.argmin(norms))}")
    f_image = ad.astensor(f_image)
    if float(np.linalg.norm(f_image.value)) == 0.0:
        # canonical fallback for the empty coalition: all cosines are 0
        return ad.Tensor(np.zeros(prompt_matrix.shape[0]))
    return ad.matmul(
        ad.l2_normalize(prompt_matrix, axis=1), ad.l2_normalize(f_image, axis=0)
    )


def incidence_distribution(f_image, prompt_matrix, tau) -> ad.Tensor:
    """Softmax over tau-scaled cosine scores (differentiable)."""
    scores = _cosine_scores(f_image, prompt_matrix)
    return ad.softmax(ad.mul(tau, scores), axis=0)


def hazard_probs(f_image, prompt_matrix, tau) -> ad.Tensor:
    """Per-class hazards: sigmoid of the tau-scaled cosine scores."""
    scores = _cosine_scores(f_image, prompt_matrix)
    return ad.sigmoid(ad.mul(tau, scores))


def incidence(f_image, prompt_matrix, tau, grid: TimeGrid | None = None) -> IncidenceResult:
    """Evaluate the incidence head and package the derived quantities."""
    with ad.no_grad():
        y = incidence_distribution(f_image, prompt_matrix, _scalar(tau)).value
    cif = np.cumsum(y)
    result = IncidenceResult(
        y_hat=y,
        cif=cif,
        survival=np.clip(1.0 - cif, 0.0, 1.0),  # cumsum can overshoot by ~1 ulp
        risk=float(cif.sum()),
        expected_time=None if grid is None else _midpoint_expectation(y, grid),
    )
    return result


def risk_score(result: IncidenceResult) -> float:
    """Sum of the CIF over all classes; lies in [1, C]."""
    return float(np.sum(result.cif))


def _midpoint_expectation(masses: np.ndarray, grid: TimeGrid) -> float:
    if masses.shape[0] != grid.num_classes:
        raise ValueError(
            f"{masses.shape[0]} classes vs grid with {grid.num_classes} bins"
        )
    return float(np.dot(masses, grid.midpoints()))


def expected_time(result: IncidenceResult, grid: TimeGrid) -> float:
    """Expected time-to-event: probability-weighted bin midpoints."""
    return _midpoint_expectation(result.y_hat, grid)


def hazard_head(f_image, prompt_matrix, tau, grid: TimeGrid | None = None) -> HazardResult:
    """Hazard-based prediction: h_c = sigmoid(tau cos), S(c) = prod(1 - h).

    The risk is sum_c (1 - S(c)).  For the expected time, the first-hitting
    masses S(c-1) - S(c) are used, with the residual tail S(C) assigned to
    the final bin (same closure as the grid).
    """
    with ad.no_grad():
        h = hazard_probs(f_image, prompt_matrix, _scalar(tau)).value
    surv = np.cumprod(1.0 - h)
    exp_t = None
    if grid is not None:
        masses = np.concatenate([[1.0], surv[:-1]]) - surv
        masses[-1] += surv[-1]
        exp_t = _midpoint_expectation(masses, grid)
    return HazardResult(
        hazards=h,
        survival=surv,
        risk=float(np.sum(1.0 - surv)),
        expected_time=exp_t,
    )


def survival_at_time(result: IncidenceResult, grid: TimeGrid, t: float) -> float:
    """Predicted S(t) by piecewise-constant interpolation over the bins."""
    c = time_to_class(t, grid)
    return float(result.survival[c - 1])


def _scalar(tau):
    if isinstance(tau, ad.Tensor):
        return tau
    return ad.Tensor(float(tau))
