"""Training objectives for the incidence and hazard heads.

The likelihood term handles censoring by penalizing only the event mass
that a censored observation rules out.  The ordinality regularizer is the
squared L2 distance between the predicted and target CDFs (a squared earth
mover's distance); the prefactored closed-form EMD is exposed separately
as a diagnostic measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .labels import DiscreteLabel, target_distribution

LOG_FLOOR = 1e-12

INCIDENCE = "incidence"
HAZARD = "hazard"


@dataclass
class LossConfig:
    beta: float = 1.0  # weight of the CDF regularizer
    emd_norm_order: int = 1  # order l of the diagnostic EMD measure
    use_emd: bool = True
    head: str = INCIDENCE

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.emd_norm_order < 1:
            raise ValueError("emd_norm_order must be >= 1")
        if self.head not in (INCIDENCE, HAZARD):
            raise ValueError(f"head must be {INCIDENCE!r} or {HAZARD!r}")


def _safe_log(x):
    return ad.log(ad.clamp_min(x, LOG_FLOOR))


def mle_loss(y_hat, label: DiscreteLabel) -> ad.Tensor:
    """Negative log-likelihood of the first-hitting distribution.

    Events: -log y_c.  Censored at class c: -log(1 - sum_{i<c} y_i), the
    probability that the event did not happen in any earlier bin.
    """
    y_hat = ad.astensor(y_hat)
    c = label.klass
    if label.event == 1:
        return -_safe_log(y_hat[c - 1])
    if c == 1:
        return ad.Tensor(0.0)
    early = ad.sum_(y_hat[: c - 1])
    return -_safe_log(1.0 - early)


def emd_measure(p, q, norm_order=1) -> float:
    """Closed-form earth mover's distance (1/C)^(1/l) * ||CDF(p) - CDF(q)||_l."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("p and q must be 1-D distributions of equal length")
    if norm_order < 1:
        raise ValueError("norm order must be >= 1")
    num_classes = p.shape[0]
    diff = np.abs(np.cumsum(p) - np.cumsum(q))
    l = float(norm_order)
    return float((1.0 / num_classes) ** (1.0 / l) * np.sum(diff**l) ** (1.0 / l))


def emd_loss(y_hat, label: DiscreteLabel, num_classes: int, tau_prime: float) -> ad.Tensor:
    """Squared L2 distance between predicted and target CDFs (no prefactor)."""
    y_hat = ad.astensor(y_hat)
    target = target_distribution(label, num_classes, tau_prime)
    diff = ad.cumsum(y_hat) - np.cumsum(target)
    return ad.sum_(ad.mul(diff, diff))


def hazard_nll(hazards, label: DiscreteLabel) -> ad.Tensor:
    """Discrete-hazard likelihood: events hit bin c after surviving the
    earlier bins; censored records survive through their bin."""
    hazards = ad.astensor(hazards)
    c = label.klass
    if label.event == 1:
        loss = -_safe_log(hazards[c - 1])
        if c > 1:
            loss = loss - ad.sum_(_safe_log(1.0 - hazards[: c - 1]))
        return loss
    return -ad.sum_(_safe_log(1.0 - hazards[:c]))


def total_loss(prediction, label: DiscreteLabel, config: LossConfig, tau_prime: float) -> ad.Tensor:
    """Combined objective.

    Incidence head: MLE plus beta times the squared-EMD regularizer.
    Hazard head: the hazard likelihood alone (the regularizer is defined on
    the first-hitting distribution and is not applied to hazards).
    """
    if config.head == HAZARD:
        return hazard_nll(prediction, label)
    prediction = ad.astensor(prediction)
    loss = mle_loss(prediction, label)
    if config.use_emd and config.beta > 0:
        loss = loss + config.beta * emd_loss(
            prediction, label, prediction.shape[0], tau_prime
        )
    return loss
