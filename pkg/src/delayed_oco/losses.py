"""Oblivious loss sequences with value/gradient oracles and the offline comparator.

Each family draws all of its per-round parameters before the game from named
random streams keyed by ``(seed, family tag, parameter tag)``; round ``t``'s
parameters are the same for every horizon ``T >= t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .geometry import Ball, Box, Domain


class LossError(ValueError):
    pass


class ComparatorError(RuntimeError):
    """The offline comparator did not reach the requested accuracy."""

    def __init__(self, message: str, mapping_norm: float):
        super().__init__(message)
        self.mapping_norm = mapping_norm


@dataclass(frozen=True)
class Comparator:
    x: np.ndarray
    total: float
    iterations: int
    tolerance: float


class LossFamily:
    """Base class.  Subclasses fill ``G``, ``M``, ``lam`` and ``smoothness``
    (an upper bound on the per-round gradient Lipschitz constant) and
    implement the ``_value_grad`` / ``_values`` / ``_grads`` kernels."""

    kind = "abstract"

    def __init__(self, domain: Domain, horizon: int, seed: int):
        if horizon < 1:
            raise LossError("horizon must be positive")
        self.domain = domain
        self.dim = domain.dim
        self.horizon = int(horizon)
        self.seed = int(seed)
        self.G = 0.0
        self.M = 0.0
        self.lam = 0.0
        self.smoothness = 0.0

    # -- public checked oracles -------------------------------------------------
    def _checked(self, t: int, x) -> np.ndarray:
        if not 1 <= t <= self.horizon:
            raise LossError(f"round {t} outside [1, {self.horizon}]")
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise LossError(f"expected a {self.dim}-vector")
        if not self.domain.contains(x, tol=1e-9):
            raise LossError(f"round {t}: point {x.tolist()} lies outside the domain")
        return x

    def value(self, t: int, x) -> float:
        return self._value_grad(t, self._checked(t, x))[0]

    def grad(self, t: int, x) -> np.ndarray:
        return self._value_grad(t, self._checked(t, x))[1]

    def value_grad(self, t: int, x) -> tuple[float, np.ndarray]:
        return self._value_grad(t, self._checked(t, x))

    # -- kernels (no domain check; used by the simulation loop) -----------------
    def _value_grad(self, t: int, x: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def _value(self, t: int, x: np.ndarray) -> float:
        return self._value_grad(t, x)[0]

    def values_at(self, rounds, X) -> np.ndarray:
        """``out[i] = f_{rounds[i]}(X[i])``, vectorised."""
        raise NotImplementedError

    def grads_at(self, rounds, X) -> np.ndarray:
        raise NotImplementedError

    # -- aggregates --------------------------------------------------------------
    def total_value(self, x, T: int | None = None) -> float:
        T = self._horizon(T)
        x = np.asarray(x, dtype=float).reshape(-1)
        rounds = np.arange(1, T + 1)
        return float(np.sum(self.values_at(rounds, np.broadcast_to(x, (T, self.dim)))))

    def total_grad(self, x, T: int | None = None) -> np.ndarray:
        T = self._horizon(T)
        x = np.asarray(x, dtype=float).reshape(-1)
        rounds = np.arange(1, T + 1)
        return np.sum(self.grads_at(rounds, np.broadcast_to(x, (T, self.dim))), axis=0)

    def _horizon(self, T):
        T = self.horizon if T is None else int(T)
        if not 1 <= T <= self.horizon:
            raise LossError(f"T={T} outside [1, {self.horizon}]")
        return T

    @property
    def nu(self) -> float:
        """Smoothness ratio ``M / (G r)``."""
        if self.G <= 0:
            return 0.0
        return self.M / (self.G * self.domain.r) if self.domain.r > 0 else math.inf

    def _exact_minimizer(self, T: int) -> np.ndarray | None:
        return None

    def best_in_hindsight(self, T: int | None = None, eps_opt: float | None = None,
                          budget: int = 100_000) -> Comparator:
        """Minimise ``sum_{t<=T} f_t`` over the domain.

        Families with a closed-form or one-dimensional minimiser use it;
        otherwise accelerated projected gradient on the average loss runs until
        the gradient-mapping gap certificate drops below ``eps_opt / T``.
        """
        T = self._horizon(T)
        if eps_opt is None:
            eps_opt = 1e-8 * T * max(self.G, 1e-300) * self.domain.D
        x = self._exact_minimizer(T)
        if x is not None:
            return Comparator(x, self.total_value(x, T), 0, 0.0)
        x, it = _accelerated_pgd(self, T, eps_opt / T, budget)
        return Comparator(x, self.total_value(x, T), it, eps_opt)

    def validate_constants(self, n: int = 10_000, seed: int = 0) -> dict:
        """Sample ``n`` (round, point) pairs and check G, M and strong convexity."""
        g = np.random.Generator(np.random.Philox(seed))
        X = self.domain.sample(g, n)
        Y = self.domain.sample(g, n)
        rounds = g.integers(1, self.horizon + 1, size=n)
        fx = self.values_at(rounds, X)
        fy = self.values_at(rounds, Y)
        gx = self.grads_at(rounds, X)
        gnorm = float(np.max(np.linalg.norm(gx, axis=1)))
        fmax = float(np.max(np.abs(np.r_[fx, fy])))
        sc_gap = fy - fx - np.einsum("ij,ij->i", gx, Y - X) - 0.5 * self.lam * np.sum((Y - X) ** 2, axis=1)
        slack = 1e-9 * max(1.0, self.M)
        return {
            "max_grad_norm": gnorm,
            "max_abs_value": fmax,
            "min_strong_convexity_gap": float(np.min(sc_gap)),
            "gradient_bound_ok": gnorm <= self.G + slack,
            "value_bound_ok": fmax <= self.M + slack,
            "strong_convexity_ok": bool(np.min(sc_gap) >= -slack),
        }


def _accelerated_pgd(fam: LossFamily, T: int, eps_avg: float, budget: int):
    dom = fam.domain
    L = fam.smoothness
    if L <= 0:
        raise LossError("accelerated projected gradient needs a positive smoothness bound")

    def F(x):
        return fam.total_value(x, T) / T

    def gradF(x):
        return fam.total_grad(x, T) / T

    x = dom.project(dom.origin)
    y = x.copy()
    theta = 1.0
    fx = F(x)
    gm = math.inf
    for it in range(1, budget + 1):
        xn = dom.project(y - gradF(y) / L)
        gmap = L * (y - xn)
        gm = float(np.linalg.norm(gmap))
        dist = float(np.linalg.norm(y - dom.project(y)))
        if gm * (dom.D + dist) <= eps_avg:
            return xn, it
        fxn = F(xn)
        if fxn > fx:  # adaptive restart
            theta = 1.0
            y = x.copy()
            continue
        theta_n = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        y = xn + ((theta - 1.0) / theta_n) * (xn - x)
        x, fx, theta = xn, fxn, theta_n
    raise ComparatorError(
        f"comparator did not converge in {budget} iterations; gradient mapping norm {gm:.3e}", gm
    )


# ----------------------------------------------------------------------------
# families


def _max_norm(domain: Domain) -> float:
    return domain.R


class LinearStream(LossFamily):
    """``f_t(x) = <a_t, x> + offset`` with ``a_t = G (bias + spread v_t)``,
    ``v_t`` uniform in the unit ball and ``|bias| + spread <= 1``.

    Explicit vectors may be passed instead, in which case ``G`` is their
    largest norm.
    """

    kind = "linear"
    _TAG = 11

    def __init__(self, domain, horizon, seed=0, G=1.0, bias=None, spread=None,
                 vectors=None, offset=0.0):
        super().__init__(domain, horizon, seed)
        self.offset = float(offset)
        if vectors is not None:
            a = np.array(vectors, dtype=float).reshape(self.horizon, self.dim)
            self.G = float(np.max(np.linalg.norm(a, axis=1))) if a.size else 0.0
        else:
            b = np.zeros(self.dim) if bias is None else np.asarray(bias, dtype=float).reshape(-1)
            nb = float(np.linalg.norm(b))
            spread = 1.0 - nb if spread is None else float(spread)
            if nb + spread > 1 + 1e-12 or spread < 0:
                raise LossError("need |bias| + spread <= 1")
            v = _rng.unit_ball_points(seed, (_rng.LOSS, self._TAG), self.horizon, self.dim)
            a = float(G) * (b + spread * v)
            self.G = float(G)
        self.a = a
        self.M = self.G * _max_norm(domain) + abs(self.offset)

    def _value_grad(self, t, x):
        a = self.a[t - 1]
        return float(a @ x) + self.offset, a

    def _value(self, t, x):
        return float(self.a[t - 1] @ x) + self.offset

    def values_at(self, rounds, X):
        A = self.a[np.asarray(rounds) - 1]
        return np.einsum("ij,ij->i", A, X) + self.offset

    def grads_at(self, rounds, X):
        return self.a[np.asarray(rounds) - 1].copy()

    def total_value(self, x, T=None):
        T = self._horizon(T)
        return float(self.a[:T].sum(axis=0) @ np.asarray(x, dtype=float)) + T * self.offset

    def total_grad(self, x, T=None):
        return self.a[: self._horizon(T)].sum(axis=0)

    def _exact_minimizer(self, T):
        return self.domain.linear_minimizer(self.a[:T].sum(axis=0))


class QuadraticStream(LossFamily):
    """``f_t(x) = lam/2 |x - theta_t|^2 + <b_t, x>``.

    ``theta_t = center + center_radius w_t`` and ``b_t = linear_scale w'_t``
    with ``w_t, w'_t`` uniform in the unit ball.
    """

    kind = "quadratic"
    _TAG = 12

    def __init__(self, domain, horizon, seed=0, lam=1.0, center=None, center_radius=0.5,
                 linear_scale=0.0, centers=None, linear=None):
        super().__init__(domain, horizon, seed)
        if lam < 0:
            raise LossError("lam must be non-negative")
        self.lam = float(lam)
        k = self.dim
        if centers is not None:
            th = np.array(centers, dtype=float).reshape(self.horizon, k)
            th_bound = float(np.max(np.linalg.norm(th, axis=1)))
        else:
            c = np.zeros(k) if center is None else np.asarray(center, dtype=float).reshape(-1)
            w = _rng.unit_ball_points(seed, (_rng.LOSS, self._TAG, 1), self.horizon, k)
            th = c + float(center_radius) * w
            th_bound = float(np.linalg.norm(c)) + float(center_radius)
        if linear is not None:
            b = np.array(linear, dtype=float).reshape(self.horizon, k)
            b_bound = float(np.max(np.linalg.norm(b, axis=1)))
        elif linear_scale:
            b = float(linear_scale) * _rng.unit_ball_points(seed, (_rng.LOSS, self._TAG, 2), self.horizon, k)
            b_bound = float(linear_scale)
        else:
            b = np.zeros((self.horizon, k))
            b_bound = 0.0
        self.theta = th
        self.b = b
        R = _max_norm(domain)
        self.G = self.lam * (R + th_bound) + b_bound
        self.M = 0.5 * self.lam * (R + th_bound) ** 2 + b_bound * R
        self.smoothness = self.lam

    def _value_grad(self, t, x):
        diff = x - self.theta[t - 1]
        b = self.b[t - 1]
        return 0.5 * self.lam * float(diff @ diff) + float(b @ x), self.lam * diff + b

    def _value(self, t, x):
        diff = x - self.theta[t - 1]
        return 0.5 * self.lam * float(diff @ diff) + float(self.b[t - 1] @ x)

    def values_at(self, rounds, X):
        idx = np.asarray(rounds) - 1
        diff = X - self.theta[idx]
        return 0.5 * self.lam * np.sum(diff * diff, axis=1) + np.einsum("ij,ij->i", self.b[idx], X)

    def grads_at(self, rounds, X):
        idx = np.asarray(rounds) - 1
        return self.lam * (X - self.theta[idx]) + self.b[idx]

    def _exact_minimizer(self, T):
        sb = self.b[:T].sum(axis=0)
        if self.lam == 0:
            return self.domain.linear_minimizer(sb)
        # isotropic quadratic: the constrained minimiser is the projection of the
        # unconstrained one
        st = self.theta[:T].sum(axis=0)
        return self.domain.project((self.lam * st - sb) / (T * self.lam))


def huber(z, width):
    a = np.abs(z)
    return np.where(a <= width, z * z / (2 * width), a - 0.5 * width)


def huber_slope(z, width):
    return np.clip(z / width, -1.0, 1.0)


class SmoothedPiecewise(LossFamily):
    """``f_t(x) = G h_w(<u, x> - theta_t)`` where ``h_w`` is the Huber function
    of width ``w`` (a smoothed absolute value) and ``u`` a unit direction."""

    kind = "piecewise"
    _TAG = 13

    def __init__(self, domain, horizon, seed=0, G=1.0, direction=None, offset_range=0.5,
                 offset_center=0.0, width=None, offsets=None):
        super().__init__(domain, horizon, seed)
        u = np.eye(self.dim)[0] if direction is None else np.asarray(direction, dtype=float).reshape(-1)
        nu = float(np.linalg.norm(u))
        if nu == 0:
            raise LossError("direction must be non-zero")
        self.u = u / nu
        self.width = 1e-3 * domain.D if width is None else float(width)
        if self.width <= 0:
            raise LossError("width must be positive")
        if offsets is not None:
            th = np.array(offsets, dtype=float).reshape(self.horizon)
        else:
            th = _rng.uniform_interval(seed, (_rng.LOSS, self._TAG), self.horizon,
                                       offset_center - offset_range, offset_center + offset_range)
        self.theta = th
        self.G = float(G)
        self.M = self.G * (_max_norm(domain) + float(np.max(np.abs(th))))
        self.smoothness = self.G / self.width

    def _value_grad(self, t, x):
        z = float(self.u @ x) - self.theta[t - 1]
        w = self.width
        if abs(z) <= w:
            return self.G * z * z / (2 * w), (self.G * z / w) * self.u
        return self.G * (abs(z) - 0.5 * w), (self.G * math.copysign(1.0, z)) * self.u

    def values_at(self, rounds, X):
        z = X @ self.u - self.theta[np.asarray(rounds) - 1]
        return self.G * huber(z, self.width)

    def grads_at(self, rounds, X):
        z = X @ self.u - self.theta[np.asarray(rounds) - 1]
        return (self.G * huber_slope(z, self.width))[:, None] * self.u

    def _exact_minimizer(self, T):
        # the objective depends on x only through s = <u, x>: bisect on the
        # monotone derivative in s, then pick a domain point on that level set
        th = self.theta[:T]
        lo, hi = _support_interval(self.domain, self.u)

        def slope(s):
            return float(np.sum(huber_slope(s - th, self.width)))

        if slope(lo) >= 0:
            s = lo
        elif slope(hi) <= 0:
            s = hi
        else:
            a, b = lo, hi
            for _ in range(200):
                m = 0.5 * (a + b)
                if m in (a, b):
                    break
                if slope(m) > 0:
                    b = m
                else:
                    a = m
            s = 0.5 * (a + b)
        return _point_on_level(self.domain, self.u, s)


def _support_interval(domain: Domain, u: np.ndarray) -> tuple[float, float]:
    if isinstance(domain, Ball):
        c = float(u @ domain.center)
        return c - domain.radius, c + domain.radius
    if isinstance(domain, Box):
        return (float(np.sum(np.minimum(u * domain.lo, u * domain.hi))),
                float(np.sum(np.maximum(u * domain.lo, u * domain.hi))))
    raise LossError(f"unsupported domain {domain!r}")


def _point_on_level(domain: Domain, u: np.ndarray, s: float) -> np.ndarray:
    if isinstance(domain, Ball):
        x = domain.center + (s - float(u @ domain.center)) * u
        return domain.project(x)
    # <u, clip(tau u)> is continuous and non-decreasing in tau
    a, b = -1.0, 1.0
    while float(u @ domain.project(a * u)) > s and a > -1e18:
        a *= 2
    while float(u @ domain.project(b * u)) < s and b < 1e18:
        b *= 2
    for _ in range(200):
        m = 0.5 * (a + b)
        if m in (a, b):
            break
        if float(u @ domain.project(m * u)) < s:
            a = m
        else:
            b = m
    return domain.project(0.5 * (a + b) * u)


class SumFamily(LossFamily):
    """Pointwise sum of families sharing domain and horizon."""

    kind = "sum"

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise LossError("a sum needs at least one part")
        d0 = parts[0]
        for p in parts[1:]:
            if p.domain is not d0.domain or p.horizon != d0.horizon:
                raise LossError("all parts must share domain and horizon")
        super().__init__(d0.domain, d0.horizon, d0.seed)
        self.parts = parts
        self.G = sum(p.G for p in parts)
        self.M = sum(p.M for p in parts)
        self.lam = sum(p.lam for p in parts)
        self.smoothness = sum(p.smoothness for p in parts)

    def _value_grad(self, t, x):
        v = 0.0
        g = np.zeros(self.dim)
        for p in self.parts:
            pv, pg = p._value_grad(t, x)
            v += pv
            g = g + pg
        return v, g

    def values_at(self, rounds, X):
        return sum(p.values_at(rounds, X) for p in self.parts)

    def grads_at(self, rounds, X):
        return sum(p.grads_at(rounds, X) for p in self.parts)

    def total_value(self, x, T=None):
        return float(sum(p.total_value(x, T) for p in self.parts))

    def total_grad(self, x, T=None):
        return sum(p.total_grad(x, T) for p in self.parts)

    def _exact_minimizer(self, T):
        if self.smoothness == 0:
            return self.domain.linear_minimizer(self.total_grad(self.domain.origin, T))
        return None


def build_family(kind: str, domain: Domain, horizon: int, seed: int, **params) -> LossFamily:
    """Construct a family from its config name; ``sum`` takes ``parts``, a list of
    ``{"kind": ..., **params}`` dicts whose seeds are offset by their position."""
    kinds = {
        "linear": LinearStream,
        "quadratic": QuadraticStream,
        "piecewise": SmoothedPiecewise,
    }
    if kind == "sum":
        parts = []
        for i, spec in enumerate(params.pop("parts")):
            spec = dict(spec)
            k = spec.pop("kind")
            parts.append(build_family(k, domain, horizon, seed * 1009 + i, **spec))
        if params:
            raise LossError(f"unknown parameters for sum: {sorted(params)}")
        return SumFamily(parts)
    if kind not in kinds:
        raise LossError(f"unknown loss family {kind!r}; choose from {sorted(kinds) + ['sum']}")
    try:
        return kinds[kind](domain, horizon, seed, **params)
    except TypeError as exc:
        raise LossError(f"bad parameters for {kind}: {exc}") from None
