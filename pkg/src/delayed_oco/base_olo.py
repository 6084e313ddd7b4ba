"""Drift-penalised online linear optimisation: proximal FTRL and OMD.

Both learners receive packets ``(c_n, lag_n, outstanding_n)`` together with a
learning rate ``eta_n`` and return the next iterate ``z_{n+1}``.  The
Euclidean regulariser ``1/2 |.|^2`` is used throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Domain


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class BaseUpdatePacket:
    c: np.ndarray
    lag: int = 0
    outstanding: int = 0
    delta_prime: float | None = None  # smoothing radius at the arrival round


class _Learner:
    name = "abstract"

    def __init__(self, domain: Domain, z1=None):
        self.domain = domain
        z = domain.project(domain.origin if z1 is None else z1)
        self.z = z
        self.eta = math.inf  # eta_0 = +inf, i.e. 1/eta_0 = 0
        self.n = 0
        self.eta_history: list[float] = []

    def _validate(self, c, eta):
        if not eta > 0 or not math.isfinite(eta):
            raise LearnerError(f"update {self.n + 1}: learning rate {eta} must be positive and finite")
        if eta > self.eta:
            raise LearnerError(
                f"update {self.n + 1}: learning rate increased from {self.eta} to {eta}"
            )
        c = np.asarray(c, dtype=float).reshape(-1)
        if c.size != self.domain.dim:
            raise LearnerError(f"loss vector has dimension {c.size}, expected {self.domain.dim}")
        if not np.all(np.isfinite(c)):
            raise LearnerError(f"update {self.n + 1}: non-finite loss vector")
        return c

    def step(self, c, eta: float) -> np.ndarray:
        raise NotImplementedError


class PFTRL(_Learner):
    """Proximal FTRL with running sums.

    After update ``n`` the iterate is the minimiser over the domain of
    ``sum_{m<=n} <c_m, z> + alpha_m/2 |z - z_m|^2`` with
    ``alpha_m = 1/eta_m - 1/eta_{m-1}``.  Completing the square gives
    ``z_{n+1} = Proj((S - C) / A)`` with ``A = 1/eta_n``,
    ``S = sum alpha_m z_m`` and ``C = sum c_m``.
    """

    name = "pftrl"

    def __init__(self, domain: Domain, z1=None):
        super().__init__(domain, z1)
        self.A = 0.0
        self.S = np.zeros(domain.dim)
        self.C = np.zeros(domain.dim)

    def step(self, c, eta):
        c = self._validate(c, eta)
        inv = 1.0 / eta
        alpha = inv - self.A
        if alpha:
            self.S += alpha * self.z
        self.C += c
        self.A = inv
        self.z = self.domain.project((self.S - self.C) * eta)
        self.eta = eta
        self.n += 1
        self.eta_history.append(eta)
        return self.z


class OMD(_Learner):
    """Projected online gradient descent ``z_{n+1} = Proj(z_n - eta_n c_n)``."""

    name = "omd"

    def step(self, c, eta):
        c = self._validate(c, eta)
        if np.any(c):
            self.z = self.domain.project(self.z - eta * c)
        self.eta = eta
        self.n += 1
        self.eta_history.append(eta)
        return self.z


def make_learner(name: str, domain: Domain, z1=None) -> _Learner:
    if name == "pftrl":
        return PFTRL(domain, z1)
    if name == "omd":
        return OMD(domain, z1)
    raise LearnerError(f"unknown learner {name!r}; choose pftrl or omd")


def pftrl_step(state: PFTRL, packet: BaseUpdatePacket, eta: float) -> np.ndarray:
    return state.step(packet.c, eta)


def omd_step(state: OMD, packet: BaseUpdatePacket, eta: float) -> np.ndarray:
    return state.step(packet.c, eta)


def pftrl_objective(z, cs, zs, etas) -> float:
    """``sum_m <c_m, z> + (1/eta_m - 1/eta_{m-1})/2 |z - z_m|^2`` for the given history."""
    z = np.asarray(z, dtype=float)
    val = 0.0
    prev = 0.0
    for c, zm, eta in zip(cs, zs, etas):
        a = 1.0 / eta - prev
        prev = 1.0 / eta
        d = z - np.asarray(zm, dtype=float)
        val += float(np.dot(c, z)) + 0.5 * a * float(np.dot(d, d))
    return val


# ----------------------------------------------------------------------------
# learning-rate formulas


def lr_general(n: int, prefix_sigma_star: float, D: float, G: float) -> float:
    return (D / G) / math.sqrt(n + prefix_sigma_star)


def lr_strongly(n: int, lam: float) -> float:
    return 1.0 / (n * lam)


def lr_bco(n: int, prefix_sigma_star: float, prefix_delta_terms: float, D: float, G: float,
           nu: float, k: int, r: float) -> float:
    """``prefix_delta_terms`` is ``sum_{m<=n} delta'_m^{-2}``."""
    return (D / G) / math.sqrt(n + prefix_sigma_star + (nu * k * r) ** 2 * prefix_delta_terms)


def lr_2p(n: int, prefix_sigma_star: float, D: float, G: float, k: int) -> float:
    return (D / G) / math.sqrt(n * k + prefix_sigma_star)


class RateSchedule:
    """Stateful wrapper: feed packets in order, get ``eta_n``."""

    name = "abstract"

    def __init__(self):
        self.n = 0
        self.prefix_sigma_star = 0
        self.prefix_delta_terms = 0.0

    def next(self, packet: BaseUpdatePacket) -> float:
        self.n += 1
        self.prefix_sigma_star += packet.outstanding
        if packet.delta_prime is not None:
            self.prefix_delta_terms += 1.0 / (packet.delta_prime * packet.delta_prime)
        return self.value()

    def value(self) -> float:
        raise NotImplementedError


class GeneralRate(RateSchedule):
    name = "general"

    def __init__(self, D, G):
        super().__init__()
        self.D, self.G = float(D), float(G)

    def value(self):
        return lr_general(self.n, self.prefix_sigma_star, self.D, self.G)


class StronglyConvexRate(RateSchedule):
    name = "strongly_convex"

    def __init__(self, lam):
        super().__init__()
        if not lam > 0:
            raise LearnerError("the strongly convex schedule needs lam > 0")
        self.lam = float(lam)

    def value(self):
        return lr_strongly(self.n, self.lam)


class BCORate(RateSchedule):
    name = "bco"

    def __init__(self, D, G, nu, k, r):
        super().__init__()
        self.D, self.G, self.nu, self.k, self.r = float(D), float(G), float(nu), int(k), float(r)

    def next(self, packet):
        if packet.delta_prime is None:
            raise LearnerError("the bco schedule needs the arrival-round smoothing radius")
        return super().next(packet)

    def value(self):
        return lr_bco(self.n, self.prefix_sigma_star, self.prefix_delta_terms,
                      self.D, self.G, self.nu, self.k, self.r)


class TwoPointRate(RateSchedule):
    name = "two_point"

    def __init__(self, D, G, k):
        super().__init__()
        self.D, self.G, self.k = float(D), float(G), int(k)

    def value(self):
        return lr_2p(self.n, self.prefix_sigma_star, self.D, self.G, self.k)


class FixedRate(RateSchedule):
    name = "fixed"

    def __init__(self, eta):
        super().__init__()
        if not eta > 0:
            raise LearnerError("fixed learning rate must be positive")
        self.eta = float(eta)

    def value(self):
        return self.eta


# ----------------------------------------------------------------------------
# drift-penalised regret accounting


class DriftRegretLedger:
    """Per-update record of ``c_n``, ``z_n`` (the iterate the update starts
    from), ``lag_n``, ``outstanding_n`` and ``eta_n``; ``final_z`` is the
    iterate after the last update."""

    def __init__(self, dim: int):
        self.dim = dim
        self._c: list[np.ndarray] = []
        self._z: list[np.ndarray] = []
        self._lag: list[int] = []
        self._out: list[int] = []
        self._eta: list[float] = []
        self.final_z: np.ndarray | None = None

    def record(self, c, z, lag, outstanding, eta):
        self._c.append(c)
        self._z.append(z)
        self._lag.append(lag)
        self._out.append(outstanding)
        self._eta.append(eta)

    def __len__(self):
        return len(self._eta)

    @property
    def c(self) -> np.ndarray:
        return np.array(self._c, dtype=float).reshape(len(self), self.dim)

    @property
    def z(self) -> np.ndarray:
        return np.array(self._z, dtype=float).reshape(len(self), self.dim)

    @property
    def lag(self) -> np.ndarray:
        return np.array(self._lag, dtype=np.int64)

    @property
    def outstanding(self) -> np.ndarray:
        return np.array(self._out, dtype=np.int64)

    @property
    def eta(self) -> np.ndarray:
        return np.array(self._eta, dtype=float)

    def _lag_index(self) -> np.ndarray:
        lag = self.lag
        idx = np.arange(len(self)) - lag
        if np.any(idx < 0):
            raise LearnerError(f"lag exceeds n - 1 at update {int(np.flatnonzero(idx < 0)[0]) + 1}")
        return idx

    def drift_terms(self) -> np.ndarray:
        z = self.z
        return np.linalg.norm(z[self._lag_index()] - z, axis=1)

    def H_eta_terms(self) -> np.ndarray:
        eta = self.eta
        return 1.0 - eta / eta[self._lag_index()]

    def drift(self) -> float:
        return float(np.sum(self.drift_terms())) if len(self) else 0.0

    def H_eta(self) -> float:
        return float(np.sum(self.H_eta_terms())) if len(self) else 0.0

    def linear_regret(self, u) -> float:
        if not len(self):
            return 0.0
        u = np.asarray(u, dtype=float).reshape(-1)
        return float(np.sum(np.einsum("ij,ij->i", self.c, self.z - u)))

    # -- upper bounds used as diagnostics -------------------------------------
    def linear_regret_bound(self, u) -> float:
        """``sum (1/eta_n - 1/eta_{n-1})/2 |z_n - u|^2 + 1/2 sum eta_n |c_n|^2``."""
        u = np.asarray(u, dtype=float).reshape(-1)
        eta = self.eta
        inv = 1.0 / eta
        alpha = np.diff(np.r_[0.0, inv])
        dz = np.sum((self.z - u) ** 2, axis=1)
        return float(0.5 * np.sum(alpha * dz) + 0.5 * np.sum(eta * np.sum(self.c ** 2, axis=1)))

    def aggregate_drift_bound(self) -> float:
        """``sum eta_n outstanding_n |c_n|``."""
        return float(np.sum(self.eta * self.outstanding * np.linalg.norm(self.c, axis=1)))

    def lagged_sum_bound(self, D: float) -> float:
        """``sum eta_n |sum_{m=n-lag_n}^{n-1} c_m| + D H_eta`` (proximal FTRL only)."""
        c = self.c
        csum = np.vstack([np.zeros(self.dim), np.cumsum(c, axis=0)])
        n = np.arange(len(self))
        gam = csum[n] - csum[self._lag_index()]
        return float(np.sum(self.eta * np.linalg.norm(gam, axis=1)) + D * self.H_eta())

    def H_eta_bounds(self) -> tuple[float, float]:
        """``(max nu + 1) ln(e eta_1 / eta_N)`` and ``max_n sum_{m=n}^{n+nu_n} eta_m / eta_N``."""
        eta = self.eta
        out = self.outstanding
        N = len(self)
        b1 = (int(out.max()) + 1) * (1.0 + math.log(eta[0] / eta[-1]))
        ceta = np.r_[0.0, np.cumsum(eta)]
        n = np.arange(N)
        hi = np.minimum(n + out + 1, N)
        b2 = float(np.max(ceta[hi] - ceta[n]) / eta[-1])
        return b1, b2


def evaluate_drift_regret(ledger: DriftRegretLedger, u, W: float) -> float:
    """Linear regret against ``u`` plus ``W`` times the total drift."""
    return ledger.linear_regret(u) + W * ledger.drift()


class BaseLearner:
    """A learner, its rate schedule and (optionally) its ledger bundled together."""

    def __init__(self, learner: _Learner, schedule: RateSchedule, keep_ledger: bool = True):
        self.learner = learner
        self.schedule = schedule
        self.ledger = DriftRegretLedger(learner.domain.dim) if keep_ledger else None

    @property
    def z(self) -> np.ndarray:
        return self.learner.z

    def update(self, packet: BaseUpdatePacket) -> np.ndarray:
        eta = self.schedule.next(packet)
        if self.ledger is not None:
            self.ledger.record(packet.c, self.learner.z, packet.lag, packet.outstanding, eta)
        z = self.learner.step(packet.c, eta)
        if self.ledger is not None:
            self.ledger.final_z = z
        return z


def check_ledger(ledger: DriftRegretLedger, D: float, learner: str, comparators,
                 tol: float = 1e-9, max_pairs: int = 2000) -> dict:
    """Evaluate the learner guarantees on a recorded run.

    Returns ``{name: (passed, worst slack)}`` where slack is bound minus
    measured quantity (negative means violated).  A check passes when the
    slack is at least ``-tol * (1 + |bound|)``.  Proximal-FTRL-only checks are
    skipped for OMD; the all-pairs lagged check looks at the first
    ``max_pairs`` updates.
    """
    out = {}

    def put(name, bound, value):
        s = float(bound - value)
        ok = s >= -tol * (1.0 + abs(float(bound)))
        if name in out:
            ok, s = ok and out[name][0], min(s, out[name][1])
        out[name] = (bool(ok), s)

    z = np.vstack([ledger.z, ledger.final_z])
    eta, c = ledger.eta, ledger.c
    cn = np.linalg.norm(c, axis=1)
    step = np.linalg.norm(z[1:] - z[:-1], axis=1)
    i = int(np.argmin(eta * cn - step))
    put("per_step_drift", eta[i] * cn[i], step[i])
    for u in comparators:
        put("linear_regret", ledger.linear_regret_bound(u), ledger.linear_regret(u))
    put("aggregate_drift", ledger.aggregate_drift_bound(), ledger.drift())
    b1, b2 = ledger.H_eta_bounds()
    h = ledger.H_eta()
    put("H_eta_log_bound", b1, h)
    put("H_eta_window_bound", b2, h)
    if learner == "pftrl":
        put("lagged_sum_drift", ledger.lagged_sum_bound(D), ledger.drift())
        N = min(len(ledger), max_pairs)
        zz = ledger.z[:N]
        csum = np.vstack([np.zeros(ledger.dim), np.cumsum(c[:N], axis=0)])
        for lam in range(1, N):
            n = np.arange(N - lam)  # 0-based n, partner n + lam
            lhs = np.linalg.norm(zz[n + lam] - zz[n], axis=1)
            gam = np.linalg.norm(csum[n + lam] - csum[n], axis=1)
            rhs = eta[n + lam] * gam + (1.0 - eta[n + lam] / eta[n]) * D
            j = int(np.argmin(rhs - lhs))
            put("lagged_drift", rhs[j], lhs[j])
    return out
