"""Survival evaluation metrics.

Concordance follows the strict-inequality pair formula (risk ties score
zero by default; a ties=0.5 mode exists for cross-checking against common
toolkits).  MAE uses a hinge for censored records.  D-calibration tests
whether predicted survival probabilities at the event times are uniform,
with the chi-square tail probability computed from a from-scratch
regularized incomplete gamma (series / continued-fraction split).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .labels import KMCurve, SurvivalRecord, kaplan_meier

TIES_ZERO = "zero"
TIES_HALF = "half"


@dataclass(frozen=True)
class EvaluationReport:
    ci: float
    mae: float
    dcal_statistic: float
    dcal_pvalue: float
    n_pairs_comparable: int


@dataclass(frozen=True)
class DCalResult:
    statistic: float
    p_value: float
    counts: np.ndarray


@dataclass(frozen=True)
class LogrankResult:
    groups: np.ndarray  # 0 = low risk, 1 = high risk
    statistic: float
    p_value: float
    km_low: KMCurve
    km_high: KMCurve


def concordance_index(risks, records, ties=TIES_ZERO) -> float:
    """Fraction of comparable pairs ranked concordantly.

    A pair (i, j) is comparable when t_i < t_j and record i is uncensored;
    it counts when the earlier patient got the strictly higher risk.
    """
    risks = np.asarray(risks, dtype=float)
    t = np.array([r.time for r in records], dtype=float)
    d = np.array([r.event for r in records], dtype=int)
    if risks.shape[0] != t.shape[0]:
        raise ValueError("one risk per record required")
    comparable = (t[:, None] < t[None, :]) & (d[:, None] == 1)
    den = int(comparable.sum())
    if den == 0:
        raise ValueError("concordance undefined: no comparable pairs")
    wins = comparable & (risks[:, None] > risks[None, :])
    num = float(wins.sum())
    if ties == TIES_HALF:
        tied = comparable & (risks[:, None] == risks[None, :])
        num += 0.5 * tied.sum()
    elif ties != TIES_ZERO:
        raise ValueError(f"ties must be {TIES_ZERO!r} or {TIES_HALF!r}")
    return num / den


def n_comparable_pairs(records) -> int:
    t = np.array([r.time for r in records], dtype=float)
    d = np.array([r.event for r in records], dtype=int)
    return int(((t[:, None] < t[None, :]) & (d[:, None] == 1)).sum())


def mae(predicted_time: float, record: SurvivalRecord) -> float:
    """Absolute error for events; hinge max(0, t - t_hat) for censored."""
    if predicted_time < 0:
        raise ValueError("predicted time must be nonnegative")
    if record.event == 1:
        return abs(record.time - predicted_time)
    return max(0.0, record.time - predicted_time)


def cohort_mae(predicted_times, records) -> float:
    predicted_times = np.asarray(predicted_times, dtype=float)
    if predicted_times.shape[0] != len(records):
        raise ValueError("one prediction per record required")
    return float(np.mean([mae(p, r) for p, r in zip(predicted_times, records)]))


# -- chi-square tail probability ---------------------------------------------
#
# Q(a, x) = regularized upper incomplete gamma, evaluated by the standard
# split: lower series for x < a + 1, Lentz continued fraction otherwise.

_GAMMA_EPS = 1e-14
_GAMMA_ITMAX = 500
_TINY = 1e-300


def _lower_gamma_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(_GAMMA_ITMAX):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_gamma_cf(a: float, x: float) -> float:
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def regularized_upper_gamma(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a) for a > 0, x >= 0."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _lower_gamma_series(a, x)))
    return min(1.0, max(0.0, _upper_gamma_cf(a, x)))


def chi_square_sf(statistic: float, dof: int) -> float:
    """P(chi2_dof >= statistic)."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if statistic <= 0:
        return 1.0
    return regularized_upper_gamma(dof / 2.0, statistic / 2.0)


def d_calibration(survival_at_event, bins: int = 10) -> DCalResult:
    """Chi-square test that S_hat(t_i) values for events are uniform.

    Values are binned into `bins` equal-width probability intervals; the
    statistic is sum (O_k - n/bins)^2 / (n/bins) with bins - 1 degrees of
    freedom.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    values = np.asarray(list(survival_at_event), dtype=float)
    n = values.shape[0]
    if n == 0:
        raise ValueError("d_calibration needs at least one uncensored record")
    if np.any((values < -1e-9) | (values > 1 + 1e-9)):
        raise ValueError("survival probabilities must lie in [0, 1]")
    values = np.clip(values, 0.0, 1.0)
    idx = np.minimum((values * bins).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(float)
    expected = n / bins
    statistic = float(np.sum((counts - expected) ** 2 / expected))
    return DCalResult(
        statistic=statistic,
        p_value=chi_square_sf(statistic, bins - 1),
        counts=counts,
    )


def risk_grouping_logrank(risks, records) -> LogrankResult:
    """Split at the median risk (ties to low) and run a two-group log-rank test."""
    risks = np.asarray(risks, dtype=float)
    records = list(records)
    if risks.shape[0] != len(records):
        raise ValueError("one risk per record required")
    cutoff = float(np.median(risks))
    high = risks > cutoff
    n_low = int((~high).sum())
    n_high = int(high.sum())
    if n_low < 2 or n_high < 2:
        raise ValueError(
            f"degenerate risk group (low={n_low}, high={n_high}); need >= 2 each"
        )
    t = np.array([r.time for r in records], dtype=float)
    d = np.array([r.event for r in records], dtype=int)
    observed_low = 0.0
    expected_low = 0.0
    variance = 0.0
    for ut in np.unique(t[d == 1]):
        at_risk = t >= ut
        n_j = int(at_risk.sum())
        n1_j = int((at_risk & ~high).sum())
        d_j = int(((t == ut) & (d == 1)).sum())
        d1_j = int(((t == ut) & (d == 1) & ~high).sum())
        observed_low += d1_j
        expected_low += d_j * n1_j / n_j
        if n_j > 1:
            variance += (
                d_j * (n1_j / n_j) * (1.0 - n1_j / n_j) * (n_j - d_j) / (n_j - 1)
            )
    if variance == 0.0:
        statistic = 0.0
    else:
        statistic = (observed_low - expected_low) ** 2 / variance
    low_records = [r for r, h in zip(records, high) if not h]
    high_records = [r for r, h in zip(records, high) if h]
    return LogrankResult(
        groups=high.astype(int),
        statistic=float(statistic),
        p_value=chi_square_sf(float(statistic), 1),
        km_low=kaplan_meier(low_records),
        km_high=kaplan_meier(high_records),
    )
