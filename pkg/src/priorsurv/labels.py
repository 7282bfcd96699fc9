"""Discrete-time survival labels.

Continuous follow-up data (time in months plus an event indicator) is mapped
onto a grid of C non-overlapping time bins.  This module owns the grid
construction, class assignment, smoothed ground-truth target distributions,
the Kaplan-Meier product-limit estimator, and the few-shot utilities that
estimate a class for censored patients from the cohort curve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
QUANTILE = "quantile"


@dataclass(frozen=True)
class SurvivalRecord:
    """One patient's follow-up: time in months, event indicator, bag reference."""

    patient_id: str
    time: float
    event: int
    bag_path: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.time):
            raise ValueError(f"{self.patient_id}: non-finite time {self.time}")
        if self.time < 0:
            raise ValueError(f"{self.patient_id}: negative time {self.time}")
        if self.event not in (0, 1):
            raise ValueError(f"{self.patient_id}: event must be 0 or 1, got {self.event}")


@dataclass(frozen=True)
class TimeGrid:
    """Ordered cut points [T_0, ..., T_C] defining C survival classes.

    Bins are half-open [T_{c-1}, T_c) except the last, which absorbs
    everything at or beyond T_C (the maximum observed time has to land
    somewhere).
    """

    cuts: tuple
    scheme: str

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        object.__setattr__(self, "cuts", cuts)
        if self.scheme not in (UNIFORM, QUANTILE):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if len(cuts) < 3:
            raise ValueError("a grid needs at least 2 bins (3 cut points)")
        if cuts[0] != 0.0:
            raise ValueError("first cut point must be 0")
        if any(a >= b for a, b in zip(cuts, cuts[1:])):
            raise ValueError("cut points must be strictly increasing")

    @property
    def num_classes(self) -> int:
        return len(self.cuts) - 1

    def midpoints(self) -> np.ndarray:
        c = np.asarray(self.cuts)
        return (c[:-1] + c[1:]) / 2.0


@dataclass(frozen=True)
class DiscreteLabel:
    """Time-discrete label: class index c in [1, C] plus the event indicator."""

    klass: int
    event: int

    def __post_init__(self):
        if self.klass < 1:
            raise ValueError(f"class index must be >= 1, got {self.klass}")
        if self.event not in (0, 1):
            raise ValueError("event must be 0 or 1")


@dataclass(frozen=True)
class KMCurve:
    """Kaplan-Meier step function with at-risk and death counts per time."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    deaths: np.ndarray

    def survival_at(self, t: float) -> float:
        """S(t): right-continuous step lookup; 1 before the first time."""
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        if idx < 0:
            return 1.0
        return float(self.survival[idx])


def build_time_grid(records, scheme=UNIFORM, num_bins=None) -> TimeGrid:
    """Construct the time grid from a cohort.

    When ``num_bins`` is omitted, C = floor(sqrt(N_e)) with N_e the number
    of uncensored records.  Uniform grids split [0, max observed time] into
    equal bins; quantile grids place cuts at empirical quantiles of the
    event times (duplicates collapsed).
    """
    records = list(records)
    event_times = np.array([r.time for r in records if r.event == 1], dtype=float)
    if event_times.size == 0:
        raise ValueError("no uncensored records: cannot build a time grid")
    if num_bins is None:
        num_bins = int(math.floor(math.sqrt(event_times.size)))
    if num_bins < 2:
        raise ValueError(f"need at least 2 bins, got {num_bins}")

    if scheme == UNIFORM:
        t_max = max(r.time for r in records)
        if t_max <= 0:
            raise ValueError("all observation times are zero")
        cuts = np.linspace(0.0, t_max, num_bins + 1)
    elif scheme == QUANTILE:
        qs = np.arange(1, num_bins + 1) / num_bins
        cuts = np.concatenate([[0.0], np.quantile(event_times, qs)])
        cuts = np.unique(cuts)
        if cuts.size - 1 < 2:
            raise ValueError(
                "quantile cuts collapsed below 2 bins "
                f"({cuts.size - 1} left after deduplication)"
            )
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return TimeGrid(cuts=tuple(cuts), scheme=scheme)


def time_to_class(t: float, grid: TimeGrid) -> int:
    """Class c with T_{c-1} <= t < T_c; times at or past T_C map to C."""
    if t < 0:
        raise ValueError(f"negative time {t}")
    k = int(np.searchsorted(grid.cuts, t, side="right"))
    return min(k, grid.num_classes)


def assign_class(record: SurvivalRecord, grid: TimeGrid) -> DiscreteLabel:
    return DiscreteLabel(klass=time_to_class(record.time, grid), event=record.event)


def target_distribution(label: DiscreteLabel, num_classes: int, tau_prime: float) -> np.ndarray:
    """Smoothed ground-truth distribution over the C classes.

    Uncensored: softmax of +tau' at the event class and -tau' elsewhere.
    Censored at class c: +tau' at every class >= c (the event did not happen
    before c), -tau' below.
    """
    if tau_prime < 0:
        raise ValueError("tau_prime must be nonnegative")
    if not 1 <= label.klass <= num_classes:
        raise ValueError(f"class {label.klass} outside [1, {num_classes}]")
    idx = np.arange(1, num_classes + 1)
    if label.event == 1:
        signs = np.where(idx == label.klass, 1.0, -1.0)
    else:
        signs = np.where(idx >= label.klass, 1.0, -1.0)
    logits = tau_prime * signs
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def kaplan_meier(records) -> KMCurve:
    """Product-limit estimator over all distinct observed times."""
    records = list(records)
    if not records:
        raise ValueError("kaplan_meier: empty cohort")
    t = np.array([r.time for r in records], dtype=float)
    d = np.array([r.event for r in records], dtype=int)
    order = np.argsort(t, kind="stable")
    t, d = t[order], d[order]
    uniq = np.unique(t)
    times, surv, at_risk, deaths = [], [], [], []
    n = len(t)
    s = 1.0
    for ut in uniq:
        mask = t == ut
        dead = int(d[mask].sum())
        if n > 0:
            s *= 1.0 - dead / n
        times.append(float(ut))
        surv.append(s)
        at_risk.append(n)
        deaths.append(dead)
        n -= int(mask.sum())
    return KMCurve(
        times=np.array(times),
        survival=np.array(surv),
        at_risk=np.array(at_risk, dtype=int),
        deaths=np.array(deaths, dtype=int),
    )


def km_bin_masses(km: KMCurve, grid: TimeGrid) -> np.ndarray:
    """Event mass the KM curve assigns to each bin.

    The final bin absorbs the full survival tail (S at T_C is treated as 0),
    consistent with the grid's right-edge closure: class C covers
    [T_{C-1}, infinity).
    """
    s_at = np.array([km.survival_at(c) for c in grid.cuts])
    masses = s_at[:-1] - s_at[1:]
    masses[-1] = s_at[-2]  # S(T_{C-1}) - 0
    return masses


def estimate_censored_class(record: SurvivalRecord, grid: TimeGrid, km: KMCurve) -> int:
    """Most likely event class for a censored record, from the cohort KM curve.

    Picks argmax over classes c >= the censoring class of the KM-conditional
    event mass [S(T_{c-1}) - S(T_c)] / S(t), ties toward smaller c.  If the
    curve has already hit zero at the censoring time, falls back to class C.
    """
    if record.event != 0:
        raise ValueError("estimate_censored_class expects a censored record")
    C = grid.num_classes
    c0 = time_to_class(record.time, grid)
    s_t = km.survival_at(record.time)
    if s_t <= 0.0:
        return C
    masses = km_bin_masses(km, grid)[c0 - 1 :] / s_t
    return c0 + int(np.argmax(masses))


def few_shot_sample(records, grid, km, shots_per_class, seed):
    """Sample up to `shots_per_class` records per time-discrete class.

    Uncensored records use their true class; censored ones the KM-estimated
    class.  Sampling is without replacement and deterministic under `seed`;
    classes with no members are skipped (logged).  The selection preserves
    the input order.
    """
    if shots_per_class < 1:
        raise ValueError("shots_per_class must be >= 1")
    records = list(records)
    by_class: dict[int, list[int]] = {c: [] for c in range(1, grid.num_classes + 1)}
    for i, r in enumerate(records):
        if r.event == 1:
            c = time_to_class(r.time, grid)
        else:
            c = estimate_censored_class(r, grid, km)
        by_class[c].append(i)
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for c in range(1, grid.num_classes + 1):
        members = by_class[c]
        if not members:
            logger.info("few_shot_sample: class %d has no members, skipped", c)
            continue
        k = min(shots_per_class, len(members))
        picked = rng.choice(len(members), size=k, replace=False)
        chosen.extend(members[j] for j in sorted(picked))
    chosen.sort()
    return [records[i] for i in chosen]
