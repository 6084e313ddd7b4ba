from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import schedules
from delayed_oco.timeline import (
    DelaySchedule,
    EventOrder,
    ScheduleError,
    inverse_reorder,
    observation_reorder,
    outstanding_counts,
    profile,
    profile_of,
    realize,
    schedule_from,
    telescoping_sums,
    verify_identities,
)


def brute_profile(delays):
    """Quadratic-time counts from explicit timestamps.

    Prediction t happens at time t and its feedback at
    t + d_t + 1 - 2^-t, which lands between predictions t + d_t and
    t + d_t + 1 with earlier rounds observed first.
    """
    T = len(delays)
    l = [Fraction(t) for t in range(1, T + 1)]
    r = [Fraction(t + delays[t - 1] + 1) - Fraction(1, 2 ** t) for t in range(1, T + 1)]
    idx = range(T)
    d = [sum(l[t] < l[s] < r[t] for s in idx) for t in idx]
    sigma = [sum(s < t and r[s] > l[t] for s in idx) for t in idx]
    d_star = [sum(l[t] < r[s] < r[t] for s in idx) for t in idx]
    sigma_star = [sum(l[s] < r[t] < r[s] for s in idx) for t in idx]
    beta = [1 + sum(r[s] < r[t] for s in idx) for t in idx]
    order = sorted([(x, "P", t + 1) for t, x in enumerate(l)] + [(x, "O", t + 1) for t, x in enumerate(r)])
    return dict(d=d, sigma=sigma, d_star=d_star, sigma_star=sigma_star, beta=beta,
                events=[(tag, t) for _, tag, t in order])


FIG2 = [4, 2, 0, 0, 0]


def test_fig2_profile():
    p = profile_of(schedule_from(FIG2))
    assert p.sigma.tolist() == [0, 1, 2, 2, 1]
    assert p.d_star.tolist() == [3, 1, 0, 1, 1]
    assert p.sigma_star.tolist() == [1, 2, 2, 1, 0]
    assert p.beta.tolist() == [4, 2, 1, 3, 5]
    assert p.rho.tolist() == [3, 2, 4, 1, 5]
    assert [int(a.sum()) for a in (p.d, p.sigma, p.d_star, p.sigma_star)] == [6] * 4


def test_fig2_observation_sequence():
    assert realize(schedule_from(FIG2)).observation_sequence() == [3, 2, 4, 1, 5]


def test_immediate_feedback_order():
    ev = realize(schedule_from([0, 0, 0])).events
    assert list(ev) == [("P", 1), ("O", 1), ("P", 2), ("O", 2), ("P", 3), ("O", 3)]


def test_all_pending_until_end():
    ev = realize(schedule_from([2, 1, 0])).events
    assert list(ev) == [("P", 1), ("P", 2), ("P", 3), ("O", 1), ("O", 2), ("O", 3)]
    assert list(ev) == brute_profile([2, 1, 0])["events"]


def test_small_profile_against_counting():
    p = profile_of(schedule_from([2, 1, 0]))
    assert p.sigma.tolist() == [0, 1, 2]
    assert p.d_star.tolist() == [0, 1, 2]
    assert p.sigma_star.tolist() == [2, 1, 0]
    assert p.beta.tolist() == [1, 2, 3] and p.rho.tolist() == [1, 2, 3]


def test_zero_delays():
    p = profile_of(schedule_from([0] * 7))
    for a in (p.sigma, p.d_star, p.sigma_star):
        assert not a.any()
    assert p.rho.tolist() == list(range(1, 8)) == p.beta.tolist()
    assert verify_identities(p).passed


@settings(max_examples=200, deadline=None)
@given(schedules(max_T=25))
def test_profile_matches_brute_force(sched):
    ref = brute_profile(sched.delays.tolist())
    p = profile_of(sched)
    for key in ("d", "sigma", "d_star", "sigma_star", "beta"):
        assert getattr(p, key).tolist() == ref[key], key
    assert list(realize(sched).events) == ref["events"]


@settings(max_examples=300, deadline=None)
@given(schedules(max_T=60))
def test_identities_hold(sched):
    rep = verify_identities(profile_of(sched))
    assert rep.passed, rep.failures()


@settings(max_examples=100, deadline=None)
@given(schedules(max_T=40))
def test_profile_of_event_order_round_trips(sched):
    p = profile(realize(sched))
    assert np.array_equal(p.d, sched.delays)
    assert np.array_equal(p.schedule().delays, sched.delays)


@settings(max_examples=100, deadline=None)
@given(schedules(max_T=40))
def test_telescoping_and_outstanding(sched):
    p = profile_of(sched)
    lags = p.d_star[p.rho - 1]
    # outstanding counts recovered from the lags equal the dual backlogs
    assert outstanding_counts(lags).tolist() == p.sigma_star[p.rho - 1].tolist()
    sums = telescoping_sums(p)
    assert isinstance(sums, dict) and sums


def test_reorder_example():
    p = profile_of(schedule_from(FIG2))
    seq = ["a", "b", "c", "d", "e"]
    assert observation_reorder(p, seq) == ["c", "b", "d", "a", "e"]
    assert inverse_reorder(p, observation_reorder(p, seq)) == seq


def test_reorder_identity_and_round_trip():
    rng = np.random.default_rng(3)
    p = profile_of(schedule_from([0] * 6))
    assert observation_reorder(p, list("abcdef")) == list("abcdef")
    for _ in range(100):
        T = int(rng.integers(1, 30))
        d = np.minimum(rng.integers(0, 30, size=T), T - np.arange(1, T + 1))
        p = profile_of(DelaySchedule(d))
        x = rng.standard_normal(T)
        assert np.array_equal(inverse_reorder(p, observation_reorder(p, x)), x)


@pytest.mark.parametrize("field", ["sigma", "d_star", "sigma_star", "beta"])
def test_corrupted_profile_is_caught(field):
    from dataclasses import replace
    p = profile_of(schedule_from(FIG2))
    arr = getattr(p, field).copy()
    if field == "beta":
        arr[[0, 1]] = arr[[1, 0]]
    else:
        arr[0] += 1
    rep = verify_identities(replace(p, **{field: arr}))
    assert not rep.passed
    assert rep.failures()[0].name


def test_schedule_validation_names_round():
    with pytest.raises(ScheduleError, match="round 2"):
        DelaySchedule([0, 5, 0])
    with pytest.raises(ScheduleError):
        DelaySchedule([-1])


def test_event_order_validation():
    with pytest.raises(ScheduleError):
        EventOrder((("O", 1), ("P", 1)))
    with pytest.raises(ScheduleError):
        EventOrder((("P", 2), ("P", 1), ("O", 1), ("O", 2)))


def test_csv_round_trip():
    s = schedule_from([3, 0, 1, 0, 0])
    text = s.to_csv()
    assert text.splitlines()[0] == "t,d"
    assert DelaySchedule.from_csv(text).delays.tolist() == [3, 0, 1, 0, 0]


def test_schedule_summaries():
    s = schedule_from(FIG2)
    assert (s.horizon, s.d_tot, s.d_max) == (5, 6, 4)
    assert s.arrival_rounds().tolist() == [5, 4, 3, 4, 5]
    assert s.arrivals_by_round()[4] == [2, 4]
