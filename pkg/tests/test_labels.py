import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from priorsurv.labels import (
    DiscreteLabel,
    KMCurve,
    SurvivalRecord,
    TimeGrid,
    assign_class,
    build_time_grid,
    estimate_censored_class,
    few_shot_sample,
    kaplan_meier,
    target_distribution,
    time_to_class,
)


def rec(pid, t, e):
    return SurvivalRecord(patient_id=pid, time=t, event=e)


def cohort(times, events):
    return [rec(f"p{i}", t, e) for i, (t, e) in enumerate(zip(times, events))]


# -- records & grid -----------------------------------------------------------

def test_record_validation():
    with pytest.raises(ValueError):
        rec("a", -1.0, 1)
    with pytest.raises(ValueError):
        rec("a", float("nan"), 1)
    with pytest.raises(ValueError):
        rec("a", 1.0, 2)


def test_grid_invariants():
    with pytest.raises(ValueError):
        TimeGrid(cuts=(0.0, 10.0), scheme="uniform")  # only 1 bin
    with pytest.raises(ValueError):
        TimeGrid(cuts=(1.0, 10.0, 20.0), scheme="uniform")  # T_0 != 0
    with pytest.raises(ValueError):
        TimeGrid(cuts=(0.0, 10.0, 10.0), scheme="uniform")  # not increasing


def test_build_time_grid_bin_counts_from_event_counts():
    # floor(sqrt(N_e)): 75 events -> 8 bins, 130 -> 11
    for n_e, expected in [(75, 8), (130, 11)]:
        records = cohort(np.linspace(1, 100, n_e), [1] * n_e)
        grid = build_time_grid(records)
        assert grid.num_classes == expected


def test_build_time_grid_uniform_two_events():
    grid = build_time_grid(cohort([10, 20], [1, 1]), num_bins=2)
    assert grid.cuts == (0.0, 10.0, 20.0)


def test_build_time_grid_uniform_equal_widths():
    records = cohort(np.linspace(3, 97, 40), [1] * 40)
    grid = build_time_grid(records, num_bins=7)
    widths = np.diff(grid.cuts)
    assert np.allclose(widths, widths[0], rtol=1e-9)


def test_build_time_grid_no_events_errors():
    with pytest.raises(ValueError, match="no uncensored"):
        build_time_grid(cohort([1, 2], [0, 0]))


def test_build_time_grid_quantile_uses_event_times_only():
    times = [1, 2, 3, 4, 100]
    events = [1, 1, 1, 1, 0]  # the censored 100 must not stretch the cuts
    grid = build_time_grid(cohort(times, events), scheme="quantile", num_bins=2)
    assert grid.cuts[-1] == 4.0
    assert grid.cuts[0] == 0.0


def test_build_time_grid_quantile_duplicate_collapse_errors():
    records = cohort([5.0] * 20, [1] * 20)
    with pytest.raises(ValueError, match="collapsed"):
        build_time_grid(records, scheme="quantile", num_bins=4)


# -- class assignment ----------------------------------------------------------

GRID = TimeGrid(cuts=(0.0, 10.0, 20.0), scheme="uniform")


@pytest.mark.parametrize(
    "t,expected",
    [(0.0, 1), (9.99, 1), (10.0, 2), (20.0, 2), (25.0, 2)],
)
def test_assign_class_boundaries(t, expected):
    assert assign_class(rec("x", t, 1), GRID).klass == expected


def test_assign_class_negative_time_errors():
    with pytest.raises(ValueError):
        time_to_class(-0.5, GRID)


@given(st.lists(st.floats(min_value=0, max_value=30), min_size=2, max_size=20))
@settings(max_examples=50, deadline=None)
def test_assign_class_monotone(times):
    classes = [time_to_class(t, GRID) for t in sorted(times)]
    assert classes == sorted(classes)


# -- target distribution ---------------------------------------------------------

def test_target_distribution_event_values():
    y = target_distribution(DiscreteLabel(2, 1), 3, 1.0)
    expected = np.exp([-1, 1, -1]) / np.exp([-1, 1, -1]).sum()
    assert np.allclose(y, expected, atol=1e-12)
    assert y[1] == pytest.approx(0.78698604, abs=1e-6)


def test_target_distribution_zero_temperature_uniform():
    y = target_distribution(DiscreteLabel(2, 0), 3, 0.0)
    assert np.allclose(y, 1 / 3)


def test_target_distribution_saturates_to_point_mass():
    y = target_distribution(DiscreteLabel(1, 1), 2, 50.0)
    assert np.allclose(y, [1.0, 0.0], atol=1e-12)


def test_target_distribution_censored_mass_at_or_after_class():
    y = target_distribution(DiscreteLabel(3, 0), 5, 2.0)
    assert np.all(y[2:] > y[:2].max())
    assert y[2] == pytest.approx(y[3])


@given(
    st.integers(min_value=2, max_value=10),
    st.integers(min_value=1, max_value=10),
    st.integers(min_value=0, max_value=1),
    st.floats(min_value=0.0, max_value=50.0),
)
@settings(max_examples=200, deadline=None)
def test_target_distribution_is_probability_vector(num_classes, klass, event, tau):
    if klass > num_classes:
        klass = num_classes
    y = target_distribution(DiscreteLabel(klass, event), num_classes, tau)
    assert np.all(y >= 0)
    assert abs(y.sum() - 1.0) < 1e-12
    # below ~1e-8 the +/-tau logit gap underflows to an exact float tie
    if event == 1 and tau > 1e-8:
        assert int(np.argmax(y)) == klass - 1


# -- Kaplan-Meier -----------------------------------------------------------------

def test_km_three_record_hand_example():
    km = kaplan_meier(cohort([1, 2, 3], [1, 0, 1]))
    assert km.survival_at(1) == pytest.approx(2 / 3)
    assert km.survival_at(3) == pytest.approx(0.0)
    assert km.survival_at(0.5) == 1.0


def test_km_all_censored_flat():
    km = kaplan_meier(cohort([1, 5, 9], [0, 0, 0]))
    assert np.all(km.survival == 1.0)


def test_km_single_event():
    km = kaplan_meier([rec("only", 5, 1)])
    assert km.survival_at(5) == 0.0


def test_km_empty_errors():
    with pytest.raises(ValueError):
        kaplan_meier([])


def test_km_non_increasing_and_matches_empirical_without_censoring():
    rng = np.random.default_rng(3)
    times = rng.exponential(10, size=40)
    km = kaplan_meier(cohort(times, [1] * 40))
    assert np.all(np.diff(km.survival) <= 1e-15)
    for t in [1.0, 5.0, 12.0]:
        empirical = np.mean(times > t)
        assert km.survival_at(t) == pytest.approx(empirical, abs=1e-12)


# -- censored class estimate -------------------------------------------------------

def make_grid(cuts):
    return TimeGrid(cuts=tuple(cuts), scheme="uniform")


def test_estimate_censored_beyond_last_event_goes_to_final_class():
    km = kaplan_meier(cohort([5, 10, 40], [1, 1, 0]))
    grid = make_grid([0, 12, 24, 36])
    r = rec("c", 30.0, 0)
    assert estimate_censored_class(r, grid, km) == 3


def test_estimate_censored_point_mass_in_censoring_bin():
    # events concentrated at t=15; censored at 13 within the same bin
    km = kaplan_meier(cohort([15, 15, 15, 40], [1, 1, 1, 0]))
    grid = make_grid([0, 10, 20, 30])
    assert estimate_censored_class(rec("c", 13.0, 0), grid, km) == 2


def test_estimate_censored_brute_force_three_bins():
    records = cohort([2, 8, 14, 22, 28, 29], [1, 1, 1, 1, 1, 1])
    km = kaplan_meier(records)
    grid = make_grid([0, 10, 20, 30])
    r = rec("c", 5.0, 0)
    s = km.survival_at
    # conditional masses per bin, final bin takes the tail
    masses = [
        (s(0) - s(10)) / s(5.0),
        (s(10) - s(20)) / s(5.0),
        s(20) / s(5.0),
    ]
    expected = 1 + int(np.argmax(masses))
    assert estimate_censored_class(r, grid, km) == expected


def test_estimate_censored_zero_survival_falls_back_to_last():
    km = kaplan_meier(cohort([1, 2], [1, 1]))
    grid = make_grid([0, 5, 10])
    assert estimate_censored_class(rec("c", 3.0, 0), grid, km) == 2


def test_estimate_censored_requires_censored_record():
    km = kaplan_meier(cohort([1, 2], [1, 1]))
    with pytest.raises(ValueError):
        estimate_censored_class(rec("c", 1.0, 1), make_grid([0, 5, 10]), km)


# -- few-shot sampling ----------------------------------------------------------------

def few_shot_fixture():
    rng = np.random.default_rng(17)
    times = rng.uniform(1, 99, size=20)
    events = rng.integers(0, 2, size=20)
    events[:4] = 1  # ensure events exist
    records = cohort(times, events)
    grid = build_time_grid(records, num_bins=4)
    km = kaplan_meier(records)
    return records, grid, km


def test_few_shot_exhaustive_when_s_large():
    records, grid, km = few_shot_fixture()
    sampled = few_shot_sample(records, grid, km, shots_per_class=100, seed=1)
    assert sorted(r.patient_id for r in sampled) == sorted(r.patient_id for r in records)


def test_few_shot_deterministic():
    records, grid, km = few_shot_fixture()
    a = few_shot_sample(records, grid, km, 1, seed=5)
    b = few_shot_sample(records, grid, km, 1, seed=5)
    assert [r.patient_id for r in a] == [r.patient_id for r in b]


def test_few_shot_per_class_counts_bounded():
    records, grid, km = few_shot_fixture()
    sampled = few_shot_sample(records, grid, km, 2, seed=9)
    counts = {}
    for r in sampled:
        c = (
            time_to_class(r.time, grid)
            if r.event == 1
            else estimate_censored_class(r, grid, km)
        )
        counts[c] = counts.get(c, 0) + 1
    assert all(v <= 2 for v in counts.values())
    assert len(sampled) == len(set(r.patient_id for r in sampled))
