"""Episode simulation, regret accounting, bound audits, sweeps and scaling fits."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as _rng
from .base_olo import (
    BaseLearner,
    BaseUpdatePacket,
    BCORate,
    FixedRate,
    GeneralRate,
    StronglyConvexRate,
    TwoPointRate,
    check_ledger,
    make_learner,
)
from .estimators import SmoothingSchedule
from .geometry import Ball, Box, Domain
from .losses import LossFamily, build_family
from .timeline import DelaySchedule, profile, profile_of, realize
from .wrappers import W2P, WBCO, WOCO, FeedbackPacket, Gradient, SkipWrapper, TwoValues, Value


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# delay generators


@dataclass(frozen=True)
class DelayGenerator:
    """kinds: ``zero``; ``constant`` (``d``); ``uniform`` on ``0..dmax``;
    ``spike`` (the first floor(sqrt T) rounds wait min(T - t, ceil(T/2)),
    the rest 1); ``geometric`` (failures before the first success, ``p``).
    Every delay is clipped to ``T - t``."""

    kind: str = "zero"
    d: int = 0
    dmax: int = 0
    p: float = 0.5
    seed: int | None = None

    KINDS = ("zero", "constant", "uniform", "spike", "geometric")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown delay kind {self.kind!r}; choose from {self.KINDS}")
        if self.d < 0 or self.dmax < 0:
            raise ConfigError("delays must be non-negative")
        if self.kind == "geometric" and not 0 < self.p <= 1:
            raise ConfigError("geometric delays need 0 < p <= 1")

    def generate(self, T: int, seed: int = 0) -> DelaySchedule:
        seed = seed if self.seed is None else self.seed
        t = np.arange(1, T + 1)
        cap = T - t
        if self.kind == "zero":
            d = np.zeros(T, dtype=np.int64)
        elif self.kind == "constant":
            d = np.full(T, self.d, dtype=np.int64)
        elif self.kind == "uniform":
            d = _rng.stream(seed, _rng.DELAYS, 1).integers(0, self.dmax + 1, size=T)
        elif self.kind == "geometric":
            d = _rng.stream(seed, _rng.DELAYS, 2).geometric(self.p, size=T) - 1
        else:
            head = math.isqrt(T)
            d = np.ones(T, dtype=np.int64)
            d[:head] = -(-T // 2)
        return DelaySchedule(np.minimum(d, cap).astype(np.int64))


# ----------------------------------------------------------------------------
# configuration objects


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "ball"
    dim: int = 2
    radius: float = 1.0
    lo: tuple | None = None
    hi: tuple | None = None

    def build(self) -> Domain:
        if self.kind == "ball":
            return Ball(np.zeros(self.dim), self.radius)
        if self.kind == "box":
            lo = [-self.radius] * self.dim if self.lo is None else list(self.lo)
            hi = [self.radius] * self.dim if self.hi is None else list(self.hi)
            if len(lo) != self.dim or len(hi) != self.dim:
                raise ConfigError("box bounds must match the dimension")
            return Box(lo, hi)
        raise ConfigError(f"unknown domain kind {self.kind!r}; choose ball or box")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "linear"
    params: dict = field(default_factory=dict)

    def build(self, domain: Domain, T: int, seed: int) -> LossFamily:
        return build_family(self.kind, domain, T, seed, **_thaw(self.params))


def _thaw(params):
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        if isinstance(v, list):
            v = [dict(x) if isinstance(x, dict) else x for x in v]
        out[k] = v
    return out


@dataclass(frozen=True)
class EnvSpec:
    domain: DomainSpec = field(default_factory=DomainSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    delays: object = field(default_factory=DelayGenerator)  # DelayGenerator or DelaySchedule

    def schedule(self, T: int, seed: int) -> DelaySchedule:
        if isinstance(self.delays, DelaySchedule):
            if self.delays.horizon != T:
                raise ConfigError(f"fixed schedule has horizon {self.delays.horizon}, episode T={T}")
            return self.delays
        return self.delays.generate(T, seed)


@dataclass(frozen=True)
class PlayerSpec:
    """wrapper: oco | bco | two_point; learner: pftrl | omd;
    rate: general | strongly_convex | bco | two_point | fixed (``None`` picks
    the wrapper's default); smoothing: a schedule kind (``None`` picks the
    convex default); ``nu`` if given must equal M / (G r)."""

    wrapper: str = "oco"
    learner: str = "pftrl"
    rate: str | None = None
    eta: float | None = None
    smoothing: str | None = None
    smoothing_delta: float | None = None
    fixed_horizon_smoothing: bool = False
    skip: bool = False
    nu: float | None = None

    def resolved_rate(self) -> str:
        if self.rate is not None:
            return self.rate
        return {"oco": "general", "bco": "bco", "two_point": "two_point"}[self.wrapper]

    def resolved_smoothing(self) -> str:
        if self.smoothing is not None:
            return self.smoothing
        return {"bco": "bco_convex", "two_point": "twopoint_convex"}.get(self.wrapper, "fixed")


WRAPPERS = ("oco", "bco", "two_point")
RATES = ("general", "strongly_convex", "bco", "two_point", "fixed")


def check_consistency(family: LossFamily, domain: Domain, player: PlayerSpec):
    if player.wrapper not in WRAPPERS:
        raise ConfigError(f"unknown wrapper {player.wrapper!r}; choose from {WRAPPERS}")
    rate = player.resolved_rate()
    if rate not in RATES:
        raise ConfigError(f"unknown rate schedule {rate!r}; choose from {RATES}")
    if family.dim != domain.dim:
        raise ConfigError("loss family and domain dimensions differ")
    if rate == "strongly_convex" and not family.lam > 0:
        raise ConfigError("the strongly convex schedule needs a loss family with lam > 0")
    if rate in ("general", "bco", "two_point") and not family.G > 0:
        raise ConfigError(f"the {rate} schedule needs G > 0")
    if rate == "fixed" and not (player.eta and player.eta > 0):
        raise ConfigError("the fixed schedule needs a positive eta")
    if rate == "bco" and player.wrapper != "bco":
        raise ConfigError("the bco rate is only defined for the single-point wrapper")
    if player.nu is not None and not math.isclose(player.nu, family.nu, rel_tol=1e-12):
        raise ConfigError(f"declared nu={player.nu} differs from M/(G r)={family.nu}")
    if player.wrapper != "oco" and not domain.r > 0:
        raise ConfigError("value-feedback wrappers need a domain containing a ball r B with r > 0")
    if player.wrapper == "oco" and player.smoothing is not None:
        raise ConfigError("first-order wrappers take no smoothing schedule")


def build_player(player: PlayerSpec, family: LossFamily, domain: Domain, T: int, seed: int,
                 audit: bool = False):
    check_consistency(family, domain, player)
    rate = player.resolved_rate()
    k = domain.dim
    if rate == "general":
        sched = GeneralRate(domain.D, family.G)
    elif rate == "strongly_convex":
        sched = StronglyConvexRate(family.lam)
    elif rate == "bco":
        sched = BCORate(domain.D, family.G, family.nu, k, domain.r)
    elif rate == "two_point":
        sched = TwoPointRate(domain.D, family.G, k)
    else:
        sched = FixedRate(player.eta)
    base = BaseLearner(make_learner(player.learner, domain), sched)
    if player.wrapper == "oco":
        inner = WOCO(base, audit=audit)
    else:
        sm = SmoothingSchedule(
            player.resolved_smoothing(), domain.r, nu=max(family.nu, 1e-300), k=k,
            horizon=T if player.fixed_horizon_smoothing else None,
            delta=player.smoothing_delta,
        )
        g = _rng.stream(seed, _rng.PLAYER)
        cls = WBCO if player.wrapper == "bco" else W2P
        inner = cls(base, domain, sm, g, audit=audit)
    return SkipWrapper(inner) if player.skip else inner


# ----------------------------------------------------------------------------
# traces


@dataclass
class RegretTrace:
    T: int
    seed: int
    wrapper: str
    predictions: np.ndarray  # (T, k); for two-point feedback the centre of the pair
    second_points: np.ndarray | None  # (T, 2, k) for two-point feedback
    losses: np.ndarray  # incurred loss per round
    comparator: np.ndarray
    comparator_total: float
    comparator_tolerance: float
    regret: float
    cumulative_regret: np.ndarray
    d_tot: int
    sigma_max: int
    skips: int
    dprime_tot: int
    drift: float
    lin_regret: float
    H_eta: float
    G: float
    D: float
    lam: float
    fingerprint: str
    audits: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "T": self.T,
            "seed": self.seed,
            "regret": self.regret,
            "d_tot": self.d_tot,
            "sigma_max": self.sigma_max,
            "skips": self.skips,
            "dprime_tot": self.dprime_tot,
            "drift": self.drift,
            "lin_regret": self.lin_regret,
            "H_eta": self.H_eta,
        }


CSV_COLUMNS = ("T", "seed", "regret", "d_tot", "sigma_max", "skips", "dprime_tot", "drift",
               "lin_regret", "H_eta")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v))


def rows_to_csv(rows, columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) if isinstance(r[c], (int, float, np.integer, np.floating)) else r[c]
                    for c in columns])
    return buf.getvalue()


def fingerprint(env: EnvSpec, player: PlayerSpec, T: int) -> str:
    def enc(o):
        if isinstance(o, DelaySchedule):
            return {"schedule": o.delays.tolist()}
        if hasattr(o, "__dataclass_fields__"):
            return {k: enc(v) for k, v in asdict(o).items()}
        if isinstance(o, dict):
            return {k: enc(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [enc(v) for v in o]
        return o

    blob = json.dumps({"env": enc(env), "player": enc(player), "T": T, "rng": _rng.GENERATOR},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def run_episode(env: EnvSpec, player: PlayerSpec, T: int, seed: int, audit: bool = False,
                eps_opt: float | None = None) -> RegretTrace:
    domain = env.domain.build()
    family = env.loss.build(domain, T, seed)
    schedule = env.schedule(T, seed)
    wrapper = build_player(player, family, domain, T, seed, audit=audit)
    arrivals = schedule.arrivals_by_round()
    k = domain.dim
    X = np.empty((T, k))
    pairs = np.empty((T, 2, k)) if player.wrapper == "two_point" else None
    losses = np.empty(T)
    held: dict[int, object] = {}

    if player.wrapper == "oco":
        vg = family._value_grad
        for t in range(1, T + 1):
            x = wrapper.predict(t)
            v, g = vg(t, x)
            X[t - 1] = x
            losses[t - 1] = v
            held[t] = Gradient(g)
            for s in arrivals[t]:
                wrapper.receive(FeedbackPacket(s, held.pop(s), t))
    elif player.wrapper == "bco":
        val = family._value
        for t in range(1, T + 1):
            x = wrapper.predict(t)
            v = val(t, x)
            X[t - 1] = x
            losses[t - 1] = v
            held[t] = Value(v)
            for s in arrivals[t]:
                wrapper.receive(FeedbackPacket(s, held.pop(s), t))
    else:
        val = family._value
        for t in range(1, T + 1):
            x1, x2 = wrapper.predict(t)
            v1, v2 = val(t, x1), val(t, x2)
            pairs[t - 1, 0] = x1
            pairs[t - 1, 1] = x2
            X[t - 1] = 0.5 * (x1 + x2)
            losses[t - 1] = 0.5 * (v1 + v2)
            held[t] = TwoValues(v1, v2)
            for s in arrivals[t]:
                wrapper.receive(FeedbackPacket(s, held.pop(s), t))
    summary = wrapper.finish()

    comp = family.best_in_hindsight(T, eps_opt=eps_opt)
    rounds = np.arange(1, T + 1)
    comp_losses = family.values_at(rounds, np.broadcast_to(comp.x, (T, k)))
    cum = np.cumsum(losses - comp_losses)
    prof = profile_of(schedule)
    ledger = wrapper.base.ledger
    trace = RegretTrace(
        T=T, seed=seed, wrapper=player.wrapper, predictions=X, second_points=pairs,
        losses=losses, comparator=comp.x, comparator_total=comp.total,
        comparator_tolerance=comp.tolerance, regret=float(np.sum(losses) - comp.total),
        cumulative_regret=cum, d_tot=schedule.d_tot, sigma_max=prof.sigma_max,
        skips=summary.get("skips", 0), dprime_tot=summary.get("dprime_tot", schedule.d_tot),
        drift=ledger.drift(), lin_regret=ledger.linear_regret(comp.x), H_eta=ledger.H_eta(),
        G=family.G, D=domain.D, lam=family.lam, fingerprint=fingerprint(env, player, T),
    )
    trace.diagnostics["nu"] = family.nu
    trace.diagnostics["eta_last"] = float(ledger.eta[-1])
    trace.diagnostics["updates"] = summary["updates"]
    if isinstance(wrapper, SkipWrapper):
        trace.diagnostics["skip_invariants"] = wrapper.invariants(schedule)
        trace.diagnostics["skipped"] = wrapper.Q
    if player.wrapper != "oco":
        radii = wrapper_inner(wrapper).smoothing.radii(T)
        trace.diagnostics["delta_tot"] = float(np.sum(radii))
        trace.diagnostics["delta_T"] = float(radii[-1])
        trace.diagnostics["r"] = domain.r
        trace.diagnostics["k"] = k
    _audit_trace(trace, wrapper, family, schedule, prof, audit)
    return trace


def wrapper_inner(w):
    return w.inner if isinstance(w, SkipWrapper) else w


def _audit_trace(trace, wrapper, family, schedule, prof, audit):
    T = trace.T
    fwd = wrapper.forwarded
    origins = [s for s, _, _ in fwd]
    trace.audits["conservation"] = len(origins) == T and sorted(origins) == list(range(1, T + 1))
    if audit:
        inner = wrapper_inner(wrapper)
        order = inner.event_order()
        if not isinstance(wrapper, SkipWrapper):
            trace.audits["event_order_matches_schedule"] = order == realize(schedule)
            ref = prof
        else:
            eff = wrapper.effective_schedule(T)
            ref = profile(order)
            trace.audits["effective_delays_match"] = bool(np.array_equal(ref.d, eff.delays))
        ds = ref.d_star[ref.rho - 1].tolist()
        ss = ref.sigma_star[ref.rho - 1].tolist()
        trace.audits["online_duals_match_profile"] = (
            origins == ref.rho.tolist()
            and [d for _, d, _ in fwd] == ds
            and [s for _, _, s in fwd] == ss
        )
    if trace.wrapper == "oco" and not isinstance(wrapper, SkipWrapper):
        dec = decomposition_audit(trace, wrapper, family)
        trace.diagnostics["decomposition"] = dec
        trace.audits["decomposition"] = dec["ok"]


def decomposition_audit(trace: RegretTrace, wrapper, family, slack: float = 1e-6) -> dict:
    """Check ``sum_n f~_n(z_{n-d*_n}) - f~_n(x*) <= sum_n f~_n(z_n) - f~_n(x*)
    + G sum_n |z_n - z_{n-d*_n}|`` on the recorded iterates."""
    ledger = wrapper.base.ledger
    Z = ledger.z  # z_1..z_N
    fwd = wrapper.forwarded
    rounds = np.array([s for s, _, _ in fwd])
    lag = np.array([d for _, d, _ in fwd])
    n = np.arange(len(fwd))
    played = Z[n - lag]
    xs = np.broadcast_to(trace.comparator, Z.shape)
    f_star = family.values_at(rounds, xs)
    lhs = float(np.sum(family.values_at(rounds, played) - f_star))
    base_part = float(np.sum(family.values_at(rounds, Z) - f_star))
    drift = float(np.sum(np.linalg.norm(Z - played, axis=1)))
    rhs = base_part + family.G * drift
    # the played points must be exactly the lagged iterates
    replay_ok = bool(np.array_equal(played, trace.predictions[rounds - 1]))
    return {"lhs": lhs, "rhs": rhs, "ok": lhs <= rhs + slack and replay_ok,
            "replay_ok": replay_ok, "lhs_matches_regret": abs(lhs - trace.regret) <= 1e-9 * max(1, abs(lhs))}


def audit_learner_stream(seed: int, learner: str, N: int | None = None, k: int | None = None,
                         tol: float = 1e-9) -> dict:
    """Drive a base learner with a random delayed stream and check its ledger.

    Lags and outstanding counts come from the dual profile of a random delay
    schedule, loss vectors are random with norm at most 1, the domain is a unit
    ball and the rate is the general delay-adaptive one.
    """
    g = _rng.stream(seed, _rng.PLAYER, 7)
    N = int(g.integers(2, 501)) if N is None else N
    k = int(g.integers(1, 9)) if k is None else k
    dmax = int(g.integers(0, N))
    d = np.minimum(g.integers(0, dmax + 1, size=N), N - np.arange(1, N + 1))
    prof = profile_of(DelaySchedule(d.astype(np.int64)))
    lags = prof.d_star[prof.rho - 1]
    outs = prof.sigma_star[prof.rho - 1]
    C = g.standard_normal((N, k))
    C *= (g.random(N) / np.maximum(np.linalg.norm(C, axis=1), 1e-300))[:, None]
    domain = Ball(np.zeros(k), 1.0)
    base = BaseLearner(make_learner(learner, domain), GeneralRate(domain.D, 1.0))
    for n in range(N):
        base.update(BaseUpdatePacket(C[n], int(lags[n]), int(outs[n])))
    us = [np.zeros(k), domain.project(-C.sum(axis=0) * 1e9)]
    checks = check_ledger(base.ledger, domain.D, learner, us, tol=tol)
    return {"seed": seed, "learner": learner, "N": N, "k": k,
            "checks": {name: {"passed": ok, "slack": sl} for name, (ok, sl) in checks.items()}}


# ----------------------------------------------------------------------------
# explicit-constant bounds


def bound_oco_general(G, D, d_tot, T) -> float:
    return 6 * G * D * (math.sqrt(d_tot) + math.sqrt(T))


def bound_oco_sc_pftrl(G, lam, sigma_max, d_tot, T) -> float:
    L = 1 + math.log(T)
    return 9 * G * G / lam * (min(sigma_max * L, 2 * math.sqrt(d_tot)) + L)


def bound_oco_sc_omd(G, lam, sigma_max, T) -> float:
    return 3 * G * G / lam * (sigma_max + 1) * (1 + math.log(T))


def bound_bco_convex(G, D, d_tot, T, nu, k, r, delta_T, delta_tot) -> float:
    """Expected-regret bound for the single-point wrapper with the
    general-convex rate: ``D^2/eta_T + 5 G^2 S + G D H + 6 G D delta_tot / r``
    with ``1/eta_T <= (G/D) X``, ``S <= (2D/G) X``, ``H <= 8 X`` and
    ``X = sqrt(T + d_tot) + (nu k r / delta_T) sqrt(T)``."""
    X = math.sqrt(T + d_tot) + (nu * k * r / delta_T) * math.sqrt(T)
    return G * D * (19 * X + 6 * delta_tot / r)


def bound_2p_convex(G, D, d_tot, T, k, r, delta_tot, c=10.0) -> float:
    """Two-point analogue: ``D^2/eta_T + 5(c+1) G^2 S + G D H + 7 G D delta_tot / r``
    with ``X = sqrt(d_tot) + sqrt(T k)``, ``S <= (2D/G) X`` and ``H <= 4 X``."""
    X = math.sqrt(d_tot) + math.sqrt(T * k)
    return G * D * ((1 + 10 * (c + 1) + 4) * X + 7 * delta_tot / r)


def first_order_bound(trace: RegretTrace, learner: str, rate: str) -> float:
    if rate == "general":
        return bound_oco_general(trace.G, trace.D, trace.d_tot, trace.T)
    if rate == "strongly_convex":
        if learner == "pftrl":
            return bound_oco_sc_pftrl(trace.G, trace.lam, trace.sigma_max, trace.d_tot, trace.T)
        return bound_oco_sc_omd(trace.G, trace.lam, trace.sigma_max, trace.T)
    raise ConfigError(f"no explicit first-order bound for rate {rate!r}")


# ----------------------------------------------------------------------------
# sweeps and fits


def _episode_row(args):
    env, player, T, seed = args
    return run_episode(env, player, T, seed).row()


def sweep_rows(T_grid, seeds, env: EnvSpec, player: PlayerSpec, workers: int = 1) -> list[dict]:
    jobs = [(env, player, int(T), int(s)) for T in T_grid for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_episode_row, jobs))
    else:
        rows = [_episode_row(j) for j in jobs]
    return sorted(rows, key=lambda r: (r["T"], r["seed"]))


def aggregate(rows: list[dict], key: str = "regret") -> list[dict]:
    out = []
    for T in sorted({r["T"] for r in rows}):
        v = np.array([r[key] for r in rows if r["T"] == T], dtype=float)
        out.append({
            "T": T, "reps": int(v.size), "mean": float(np.mean(v)),
            "std": float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
            "min": float(np.min(v)), "max": float(np.max(v)),
        })
    return out


def sweep(T_grid, reps, env: EnvSpec, player: PlayerSpec, workers: int = 1, seed0: int = 0):
    """Run ``reps`` seeds per horizon and return ``(per-episode rows, aggregate table)``."""
    seeds = list(range(seed0, seed0 + int(reps)))
    rows = sweep_rows(T_grid, seeds, env, player, workers)
    return rows, aggregate(rows)


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    residual: float


def fit_scaling(table) -> ScalingFit:
    """Least-squares line through ``(log T, log mean)``; ``residual`` is the RMS misfit."""
    T = np.array([row["T"] for row in table], dtype=float)
    y = np.array([row["mean"] for row in table], dtype=float)
    if T.size < 2:
        raise ValueError("need at least two horizons to fit a slope")
    if np.any(y <= 0):
        raise ValueError("mean regret must be positive to fit on a log scale")
    A = np.column_stack([np.log(T), np.ones_like(T)])
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    res = np.log(y) - A @ coef
    return ScalingFit(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res ** 2))))
