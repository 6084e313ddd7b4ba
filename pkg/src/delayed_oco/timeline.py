"""Delay schedules, their event orderings, and the delay-structure profile.

A schedule assigns every round ``t`` a delay ``d_t``; the feedback of round
``t`` is observed at the end of round ``t + d_t``.  The continuous-time view
orders the ``2T`` events ``Pred(t)`` / ``Obs(t)`` on a line.  Event orders are
purely combinatorial (sequences of tags), never real-valued timestamps.

Rounds are 1-indexed in every public quantity (``rho``, ``beta`` hold round
numbers), while numpy arrays are stored 0-based, so ``profile.d[t - 1]`` is the
delay of round ``t``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PRED = "P"
OBS = "O"


class ScheduleError(ValueError):
    """Raised for delay schedules or event orders that violate their invariants."""


@dataclass(frozen=True)
class DelaySchedule:
    """Per-round delays ``d[1..T]`` with ``0 <= d_t <= T - t``."""

    delays: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delays)
        if d.ndim != 1 or d.size == 0:
            raise ScheduleError("a schedule needs a non-empty 1-d delay sequence")
        if not np.issubdtype(d.dtype, np.integer):
            if not np.all(np.equal(np.mod(d, 1), 0)):
                raise ScheduleError("delays must be integers")
        d = d.astype(np.int64)
        T = d.size
        rounds = np.arange(1, T + 1)
        bad = np.flatnonzero((d < 0) | (d > T - rounds))
        if bad.size:
            t = int(bad[0]) + 1
            raise ScheduleError(
                f"round {t}: delay {int(d[t - 1])} outside [0, {T - t}] (T={T})"
            )
        d.setflags(write=False)
        object.__setattr__(self, "delays", d)

    @property
    def horizon(self) -> int:
        return int(self.delays.size)

    @property
    def d_tot(self) -> int:
        return int(self.delays.sum())

    @property
    def d_max(self) -> int:
        return int(self.delays.max())

    def arrival_rounds(self) -> np.ndarray:
        """Round ``t + d_t`` at which each round's feedback arrives."""
        return np.arange(1, self.horizon + 1) + self.delays

    def arrivals_by_round(self) -> list[list[int]]:
        """``out[t]`` lists the rounds whose feedback arrives in round ``t``, ascending.

        Index 0 is unused so that ``out`` can be indexed by round number.
        """
        out: list[list[int]] = [[] for _ in range(self.horizon + 1)]
        for s, a in enumerate(self.arrival_rounds().tolist(), start=1):
            out[a].append(s)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "d"])
        for t, d in enumerate(self.delays.tolist(), start=1):
            w.writerow([t, d])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DelaySchedule":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["t", "d"]:
            raise ScheduleError("delay CSV must start with the header 't,d'")
        body = [r for r in rows[1:] if r]
        delays = []
        for i, row in enumerate(body, start=1):
            if len(row) != 2 or int(row[0]) != i:
                raise ScheduleError(f"delay CSV row {i}: expected round {i}, got {row}")
            delays.append(int(row[1]))
        return cls(np.array(delays, dtype=np.int64))


@dataclass(frozen=True)
class EventOrder:
    """Total order over ``Pred(t)`` / ``Obs(t)`` tags, e.g. ``(("P", 1), ("O", 1))``."""

    events: tuple

    def __post_init__(self):
        object.__setattr__(self, "events", tuple((str(k), int(t)) for k, t in self.events))
        _positions(self.events)  # validates

    @property
    def horizon(self) -> int:
        return len(self.events) // 2

    def observation_sequence(self) -> list[int]:
        return [t for k, t in self.events if k == OBS]

    def __str__(self):
        return ",".join(f"{'Pred' if k == PRED else 'Obs'}{t}" for k, t in self.events)


def _positions(events: Sequence[tuple]) -> tuple[np.ndarray, np.ndarray]:
    """Positions ``l_t`` of Pred(t) and ``r_t`` of Obs(t); validates the order."""
    n = len(events)
    if n == 0 or n % 2:
        raise ScheduleError("an event order holds exactly two events per round")
    T = n // 2
    l = np.full(T, -1, dtype=np.int64)
    r = np.full(T, -1, dtype=np.int64)
    next_pred = 1
    for pos, (kind, t) in enumerate(events):
        if not 1 <= t <= T:
            raise ScheduleError(f"event {kind}{t} refers to a round outside [1, {T}]")
        if kind == PRED:
            if t != next_pred:
                raise ScheduleError(f"Pred({t}) out of order, expected Pred({next_pred})")
            l[t - 1] = pos
            next_pred += 1
        elif kind == OBS:
            if r[t - 1] >= 0:
                raise ScheduleError(f"Obs({t}) appears twice")
            if l[t - 1] < 0:
                raise ScheduleError(f"Obs({t}) precedes Pred({t})")
            r[t - 1] = pos
        else:
            raise ScheduleError(f"unknown event tag {kind!r}")
    missing = np.flatnonzero(r < 0)
    if missing.size:
        raise ScheduleError(f"Obs({int(missing[0]) + 1}) missing")
    return l, r


def realize(schedule: DelaySchedule) -> EventOrder:
    """Event order of a round-based schedule.

    Round ``t`` contributes ``Pred(t)`` followed by the observations arriving
    in that round, in ascending prediction index.
    """
    events: list[tuple] = []
    for t, arriving in enumerate(schedule.arrivals_by_round()[1:], start=1):
        events.append((PRED, t))
        events.extend((OBS, s) for s in arriving)
    return EventOrder(tuple(events))


@dataclass(frozen=True)
class DelayProfile:
    """Delays, backlogs and their duals, plus the observation ordering.

    ``rho[n - 1]`` is the round whose feedback is observed n-th and
    ``beta[t - 1]`` is the observation rank of round ``t``.  ``l`` / ``r``
    are the event positions of predictions and observations.
    """

    d: np.ndarray
    sigma: np.ndarray
    d_star: np.ndarray
    sigma_star: np.ndarray
    rho: np.ndarray
    beta: np.ndarray
    l: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)

    @property
    def horizon(self) -> int:
        return int(self.d.size)

    @property
    def d_tot(self) -> int:
        return int(self.d.sum())

    @property
    def d_max(self) -> int:
        return int(self.d.max())

    @property
    def sigma_max(self) -> int:
        return int(self.sigma.max())

    def schedule(self) -> DelaySchedule:
        return DelaySchedule(self.d.copy())


def profile(order: EventOrder) -> DelayProfile:
    """Count delays, backlogs and duals from an event order.

    With ``L`` the (sorted) prediction positions and ``Rs`` the sorted
    observation positions, each of the four interval counts is a difference
    of ``searchsorted`` ranks, which keeps the computation ``O(T log T)``.
    """
    l, r = _positions(order.events)
    T = l.size
    t = np.arange(1, T + 1)
    rs = np.sort(r)
    preds_before_r = np.searchsorted(l, r)  # predictions issued before Obs(t)
    obs_before_l = np.searchsorted(rs, l)  # observations made before Pred(t)
    obs_before_r = np.searchsorted(rs, r)  # observations made before Obs(t)

    d = preds_before_r - t
    sigma = (t - 1) - obs_before_l
    d_star = obs_before_r - obs_before_l
    beta = obs_before_r + 1
    sigma_star = preds_before_r - beta
    rho = np.empty(T, dtype=np.int64)
    rho[beta - 1] = t
    # beta is defined as the inverse permutation of rho
    beta = np.empty(T, dtype=np.int64)
    beta[rho - 1] = t
    arrays = [a.astype(np.int64) for a in (d, sigma, d_star, sigma_star, rho, beta, l, r)]
    for a in arrays:
        a.setflags(write=False)
    return DelayProfile(*arrays)


def profile_of(schedule: DelaySchedule) -> DelayProfile:
    return profile(realize(schedule))


def observation_reorder(prof: DelayProfile, seq):
    """``out[n] = seq[rho(n)]``: re-index a per-round sequence by observation rank."""
    return _permute(seq, prof.rho, prof.horizon)


def inverse_reorder(prof: DelayProfile, seq):
    """Undo :func:`observation_reorder` (``out[t] = seq[beta(t)]``)."""
    return _permute(seq, prof.beta, prof.horizon)


def _permute(seq, perm: np.ndarray, T: int):
    if len(seq) != T:
        raise ValueError(f"sequence length {len(seq)} does not match horizon {T}")
    if isinstance(seq, np.ndarray):
        return seq[perm - 1]
    return [seq[i - 1] for i in perm.tolist()]


# ----------------------------------------------------------------------------
# identity verification


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    passed: bool
    counterexample: int | None = None
    detail: str = ""


@dataclass(frozen=True)
class IdentityReport:
    checks: tuple[IdentityCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[IdentityCheck]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> IdentityCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            c.name: {"passed": c.passed, "counterexample": c.counterexample, "detail": c.detail}
            for c in self.checks
        }


def _first(mask: np.ndarray) -> int | None:
    idx = np.flatnonzero(mask)
    return None if idx.size == 0 else int(idx[0]) + 1


def _check(name: str, violations: np.ndarray, detail: str = "") -> IdentityCheck:
    bad = _first(violations)
    return IdentityCheck(name, bad is None, bad, detail if bad is not None else "")


def outstanding_counts(lags: np.ndarray) -> np.ndarray:
    """``out[n] = #{m : m - lags[m] <= n < m}`` for 1-indexed ``n`` (difference array)."""
    lags = np.asarray(lags, dtype=np.int64)
    N = lags.size
    m = np.arange(1, N + 1)
    diff = np.zeros(N + 2, dtype=np.int64)
    np.add.at(diff, m - lags, 1)
    np.add.at(diff, m, -1)
    return np.cumsum(diff)[1 : N + 1]


def telescoping_sums(prof: DelayProfile) -> dict:
    """Harmonic sums of the reordered duals next to their logarithmic / square-root caps."""
    T = prof.horizon
    n = np.arange(1, T + 1)
    ss = observation_reorder(prof, prof.sigma_star)
    ds = observation_reorder(prof, prof.d_star)
    log_cap = prof.sigma_max * (1.0 + math.log(T))
    return {
        "sigma_star_harmonic": float(np.sum(ss / n)),
        "d_star_harmonic": float(np.sum(ds / n)),
        "log_cap": log_cap,
        "d_star_cap": min(log_cap, 2.0 * math.sqrt(prof.d_tot)),
    }


def verify_identities(prof: DelayProfile, tol: float = 1e-9) -> IdentityReport:
    """Check every structural identity of a delay profile; integer checks are exact."""
    T = prof.horizon
    t = np.arange(1, T + 1)
    d, sig, ds, ss = prof.d, prof.sigma, prof.d_star, prof.sigma_star
    checks = []

    sums = [int(x.sum()) for x in (d, sig, ds, ss)]
    checks.append(
        IdentityCheck(
            "equal_sums",
            len(set(sums)) == 1,
            None if len(set(sums)) == 1 else 1,
            "" if len(set(sums)) == 1 else f"sums d, sigma, d*, sigma* = {sums}",
        )
    )
    ok = int(sig.max()) == int(ss.max())
    checks.append(IdentityCheck("max_backlog_equals_max_dual_backlog", ok, None if ok else 1,
                                "" if ok else f"{int(sig.max())} != {int(ss.max())}"))
    dm, dsm = int(d.max()), int(ds.max())
    ok = dm <= 2 * dsm and dsm <= 2 * dm
    checks.append(IdentityCheck("max_dual_delay_within_factor_two", ok, None if ok else 1,
                                "" if ok else f"d_max={dm}, d*_max={dsm}"))
    checks.append(_check("dual_delay_relation", ds != sig + prof.beta - t))
    checks.append(_check("dual_backlog_relation", ss != d + t - prof.beta))
    inv = np.empty(T, dtype=np.int64)
    inv[prof.rho - 1] = t
    checks.append(_check("beta_inverts_rho", inv != prof.beta))

    dst = ds[prof.rho - 1]
    sst = ss[prof.rho - 1]
    checks.append(_check("prefix_domination", np.cumsum(dst) > np.cumsum(sst)))
    checks.append(_check("backlog_increment", np.r_[sig[1:] > sig[:-1] + 1, False]))
    checks.append(_check("dual_backlog_decrement", np.r_[sst[1:] < sst[:-1] - 1, False]))

    # Observation placement: Pred(rho(n)) sits after the (n - d*_n - 1)-th
    # observation and before the (n - d*_n)-th one.
    rs = np.sort(prof.r)
    lt = prof.l[prof.rho - 1]
    k = t - dst  # 1-indexed rank of the first observation after the prediction
    upper_ok = (k >= 1) & (lt < rs[np.clip(k - 1, 0, T - 1)])
    lower_ok = (k == 1) | (lt > rs[np.clip(k - 2, 0, T - 1)])
    checks.append(_check("observation_placement", ~(upper_ok & lower_ok)))
    checks.append(_check("dual_backlog_counts_lags", outstanding_counts(dst) != sst))

    tele = telescoping_sums(prof)
    cap1, cap2 = tele["log_cap"], tele["d_star_cap"]
    ok1 = tele["sigma_star_harmonic"] <= cap1 + tol * max(1.0, cap1)
    ok2 = tele["d_star_harmonic"] <= cap2 + tol * max(1.0, cap2)
    checks.append(IdentityCheck("dual_backlog_harmonic_sum", ok1, None if ok1 else T,
                                "" if ok1 else f"{tele['sigma_star_harmonic']} > {cap1}"))
    checks.append(IdentityCheck("dual_delay_harmonic_sum", ok2, None if ok2 else T,
                                "" if ok2 else f"{tele['d_star_harmonic']} > {cap2}"))
    return IdentityReport(tuple(checks))


def schedule_from(delays: Iterable[int]) -> DelaySchedule:
    return DelaySchedule(np.asarray(list(delays), dtype=np.int64))
