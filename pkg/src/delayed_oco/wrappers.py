"""Reductions from delayed OCO/BCO to drift-penalised OLO, and the skipping wrapper.

Every wrapper is a round-based player: ``predict(t)`` once per round, then
``receive(packet)`` for each feedback arriving in that round (ascending
origin round), and ``finish()`` after the last round.  Dual delays and dual
backlogs are computed online from two counters: observations received so far
and predictions issued so far.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .base_olo import BaseLearner, BaseUpdatePacket
from .estimators import SmoothingSchedule, one_point_estimate, sample_sphere, two_point_estimate
from .geometry import Domain
from .timeline import OBS, PRED, DelaySchedule, EventOrder


class WrapperError(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class Gradient:
    vector: np.ndarray


@dataclass(frozen=True, slots=True)
class Value:
    value: float


@dataclass(frozen=True, slots=True)
class TwoValues:
    plus: float
    minus: float


@dataclass(frozen=True, slots=True)
class FeedbackPacket:
    origin: int
    payload: object
    arrival: int


class _Reduction:
    payload_type: type = object

    def __init__(self, base: BaseLearner, audit: bool = False):
        self.base = base
        self.dim = base.learner.domain.dim
        self.z_bar = base.z
        self.t = 0
        self.preds = 0
        self.obs = 0
        self.n = 0
        self._pending: dict[int, tuple] = {}
        self._done: set[int] = set()
        self.audit = audit
        self.events: list[tuple] = []
        # (origin, d*, sigma*) per update, in update order
        self.forwarded: list[tuple[int, int, int]] = []
        # rounds in which z_bar changed
        self.update_rounds: list[int] = []

    def _begin_round(self, t: int, stamp: tuple):
        if t != self.t + 1:
            raise WrapperError(f"round counter went from {self.t} to {t}")
        self.t = t
        self.preds += 1
        self._pending[t] = (self.obs,) + stamp
        if self.audit:
            self.events.append((PRED, t))

    def _take(self, packet: FeedbackPacket) -> tuple:
        s = packet.origin
        if s not in self._pending:
            if s in self._done:
                raise WrapperError(f"duplicate feedback for round {s}")
            raise WrapperError(f"feedback for unknown round {s}")
        if not isinstance(packet.payload, self.payload_type):
            raise WrapperError(
                f"round {s}: expected {self.payload_type.__name__} feedback, "
                f"got {type(packet.payload).__name__}"
            )
        rec = self._pending.pop(s)
        self._done.add(s)
        return rec

    def _forward(self, s: int, obs_at_pred: int, c, delta_prime=None):
        d_star = self.obs - obs_at_pred
        self.obs += 1
        sigma_star = self.preds - self.obs
        self.n += 1
        self.z_bar = self.base.update(BaseUpdatePacket(c, d_star, sigma_star, delta_prime))
        self.forwarded.append((s, d_star, sigma_star))
        if not self.update_rounds or self.update_rounds[-1] != self.t:
            self.update_rounds.append(self.t)
        if self.audit:
            self.events.append((OBS, s))

    def zero_payload(self):
        raise NotImplementedError

    def event_order(self) -> EventOrder:
        if not self.audit:
            raise WrapperError("event order is only recorded in audit mode")
        return EventOrder(tuple(self.events))

    def finish(self) -> dict:
        if self._pending:
            raise WrapperError(f"episode ended with {len(self._pending)} rounds lacking feedback")
        return {"updates": self.n, "predictions": self.preds}


class WOCO(_Reduction):
    """First-order feedback: play the base prediction, forward gradients."""

    payload_type = Gradient

    def predict(self, t: int) -> np.ndarray:
        self._begin_round(t, ())
        return self.z_bar

    def receive(self, packet: FeedbackPacket):
        (obs_at_pred,) = self._take(packet)
        self._forward(packet.origin, obs_at_pred, packet.payload.vector)

    def zero_payload(self):
        return Gradient(np.zeros(self.dim))


class WBCO(_Reduction):
    """Single-value feedback: play ``(1 - delta_t/r) z_bar + delta_t u_t``."""

    payload_type = Value

    def __init__(self, base: BaseLearner, domain: Domain, smoothing: SmoothingSchedule,
                 rng: np.random.Generator, audit: bool = False):
        super().__init__(base, audit)
        self.domain = domain
        self.smoothing = smoothing
        self.rng = rng
        self.r = domain.r

    def predict(self, t: int) -> np.ndarray:
        delta = self.smoothing.delta_at(t)
        u = sample_sphere(self.rng, self.dim)
        self._begin_round(t, (delta, u))
        return (1.0 - delta / self.r) * self.z_bar + delta * u

    def receive(self, packet: FeedbackPacket):
        obs_at_pred, delta, u = self._take(packet)
        g = one_point_estimate(packet.payload.value, delta, u, self.dim)
        self._forward(packet.origin, obs_at_pred, g, self.smoothing.delta_at(packet.arrival))

    def zero_payload(self):
        return Value(0.0)


class W2P(_Reduction):
    """Two-value feedback: play ``x_t +- delta_t u_t`` with ``x_t = (1 - delta_t/r) z_bar``."""

    payload_type = TwoValues

    def __init__(self, base: BaseLearner, domain: Domain, smoothing: SmoothingSchedule,
                 rng: np.random.Generator, audit: bool = False):
        super().__init__(base, audit)
        self.domain = domain
        self.smoothing = smoothing
        self.rng = rng
        self.r = domain.r

    def predict(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        delta = self.smoothing.delta_at(t)
        u = sample_sphere(self.rng, self.dim)
        self._begin_round(t, (delta, u))
        x = (1.0 - delta / self.r) * self.z_bar
        return x + delta * u, x - delta * u

    def receive(self, packet: FeedbackPacket):
        obs_at_pred, delta, u = self._take(packet)
        p = packet.payload
        g = two_point_estimate(p.plus, p.minus, delta, u, self.dim)
        self._forward(packet.origin, obs_at_pred, g, self.smoothing.delta_at(packet.arrival))

    def zero_payload(self):
        return TwoValues(0.0, 0.0)


# ----------------------------------------------------------------------------
# skipping


class SkipWrapper:
    """Forward zero feedback for rounds pending longer than ``sqrt(D_t)``.

    ``D_t = D_{t-1} + |S|`` where ``S`` holds the rounds still awaiting
    feedback at the start of round ``t``.  A round ``s`` is skipped in round
    ``t`` when ``(t - s)^2 > D_t`` (exact integer test); skipped rounds are
    forwarded before the inner player predicts round ``t``.  The modified
    delay ``d'_s`` is the round of removal minus ``s``.
    """

    def __init__(self, inner):
        self.inner = inner
        self.t = 0
        self.D = 0
        self.D_history: list[int] = []  # D_1, D_2, ...
        self.tracked_sizes: list[int] = []
        self._S: dict[int, None] = {}
        self._order: deque[int] = deque()
        self.skipped: dict[int, int] = {}  # s -> skip round
        self.dprime: dict[int, int] = {}
        self.late_arrivals = 0

    @property
    def dim(self):
        return self.inner.dim

    def predict(self, t: int):
        if t != self.t + 1:
            raise WrapperError(f"round counter went from {self.t} to {t}")
        self.t = t
        self.tracked_sizes.append(len(self._S))
        self.D += len(self._S)
        self.D_history.append(self.D)
        order, S = self._order, self._S
        while order:
            s = order[0]
            if s not in S:
                order.popleft()
                continue
            if (t - s) * (t - s) <= self.D:
                break
            order.popleft()
            del S[s]
            self.skipped[s] = t
            self.dprime[s] = t - s
            self.inner.receive(FeedbackPacket(s, self.inner.zero_payload(), t))
        x = self.inner.predict(t)
        S[t] = None
        order.append(t)
        return x

    def receive(self, packet: FeedbackPacket):
        s = packet.origin
        if s in self._S:
            del self._S[s]
            self.dprime[s] = packet.arrival - s
            self.inner.receive(packet)
        elif s in self.skipped:
            self.late_arrivals += 1
        else:
            raise WrapperError(f"feedback for unknown or already delivered round {s}")

    def finish(self) -> dict:
        if self._S:
            raise WrapperError(f"episode ended with {len(self._S)} tracked rounds lacking feedback")
        out = self.inner.finish()
        out.update({"skips": len(self.skipped), "dprime_tot": self.dprime_tot})
        return out

    # convenience pass-throughs
    @property
    def base(self):
        return self.inner.base

    @property
    def forwarded(self):
        return self.inner.forwarded

    @property
    def update_rounds(self):
        return self.inner.update_rounds

    def event_order(self) -> EventOrder:
        return self.inner.event_order()

    @property
    def Q(self) -> list[int]:
        return sorted(self.skipped)

    @property
    def dprime_tot(self) -> int:
        return sum(self.dprime.values())

    def modified_delays(self, T: int) -> np.ndarray:
        return np.array([self.dprime[s] for s in range(1, T + 1)], dtype=np.int64)

    def effective_schedule(self, T: int) -> DelaySchedule:
        """Delays as experienced by the inner player: skipped feedback is
        delivered before round ``t``'s prediction, i.e. at the end of ``t - 1``."""
        d = self.modified_delays(T)
        for s in self.skipped:
            d[s - 1] -= 1
        return DelaySchedule(d)

    def invariants(self, schedule: DelaySchedule) -> dict:
        T = schedule.horizon
        d = schedule.delays
        dp = self.modified_delays(T)
        Dh = [0] + self.D_history  # Dh[t] = D_t
        q = len(self.skipped)
        dtot = int(dp.sum())
        checks = {}
        checks["skips_bounded_by_modified_delay"] = q * q <= 4 * dtot
        checks["modified_not_longer"] = bool(np.all(dp <= d))
        ok = True
        for s in range(1, T + 1):
            v = int(dp[s - 1])
            if v >= 1 and (v - 1) * (v - 1) > Dh[s + v - 1]:
                ok = False
                break
        checks["modified_delay_sqrt_bound"] = ok
        checks["skip_threshold"] = all((t - s) ** 2 > Dh[t] for s, t in self.skipped.items())
        checks["cumulative_recursion"] = all(
            Dh[t] == Dh[t - 1] + self.tracked_sizes[t - 1] for t in range(1, len(Dh))
        )
        checks["benchmark_within_factor_three"] = skip_benchmark_ok(d, self.Q, dtot)
        return checks


def sum_sqrt_le(a: int, b: int, c: int, e: int) -> bool:
    """Exact test of ``a + sqrt(b) <= c + sqrt(e)`` for non-negative integers."""
    m = c - a  # need sqrt(b) - sqrt(e) <= m
    if m >= 0:
        rest = b - m * m - e  # need rest <= 2 m sqrt(e)
        return rest <= 0 or rest * rest <= 4 * m * m * e
    m = -m  # need sqrt(b) + m <= sqrt(e)
    rest = e - b - m * m  # need 2 m sqrt(b) <= rest
    return rest >= 0 and 4 * m * m * b <= rest * rest


def skip_candidates(delays, Q) -> list[tuple[int, int]]:
    """``(|Q|, sum_{t not in Q} d_t)`` for the empty set, ``Q`` and every
    top-``j`` set of largest delays."""
    d = [int(x) for x in delays]
    total = sum(d)
    out = [(0, total)]
    qs = set(Q)
    out.append((len(qs), total - sum(d[s - 1] for s in qs)))
    rest = total
    for j, v in enumerate(sorted(d, reverse=True), start=1):
        rest -= v
        out.append((j, rest))
    return out


def skip_benchmark_ok(delays, Q, dprime_tot: int) -> bool:
    """``|Q*| + sqrt(d'_tot) <= 3 (|Q| + sqrt(sum_{t not in Q} d_t))`` for every candidate ``Q``."""
    q = len(Q)
    return all(sum_sqrt_le(q, dprime_tot, 3 * j, 9 * rest) for j, rest in skip_candidates(delays, Q))


def skip_benchmark_ratio(delays, Q, dprime_tot: int) -> float:
    best = min(j + math.sqrt(rest) for j, rest in skip_candidates(delays, Q))
    val = len(Q) + math.sqrt(dprime_tot)
    return val / best if best > 0 else (0.0 if val == 0 else math.inf)
