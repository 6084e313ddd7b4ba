"""Sphere sampling, ball smoothing and one/two-point gradient estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EstimatorError(ValueError):
    pass


def sample_sphere(rng: np.random.Generator, k: int) -> np.ndarray:
    """Uniform unit vector in R^k via normalised Gaussians."""
    if k < 1:
        raise EstimatorError("dimension must be at least 1")
    while True:
        g = rng.standard_normal(k)
        n2 = float(g @ g)
        if n2 > 0.0:
            return g / math.sqrt(n2)


def sample_sphere_batch(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    g = rng.standard_normal((n, k))
    norms = np.linalg.norm(g, axis=1)
    bad = norms == 0.0
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), k))
        norms = np.linalg.norm(g, axis=1)
        bad = norms == 0.0
    return g / norms[:, None]


def sample_ball_batch(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    u = sample_sphere_batch(rng, n, k)
    return u * (rng.random(n) ** (1.0 / k))[:, None]


def one_point_estimate(f_value: float, delta: float, u: np.ndarray, k: int) -> np.ndarray:
    """``(k / delta) f(x + delta u) u``."""
    if not delta > 0:
        raise EstimatorError(f"smoothing radius must be positive, got {delta}")
    return (k * f_value / delta) * u


def two_point_estimate(f_plus: float, f_minus: float, delta: float, u: np.ndarray, k: int) -> np.ndarray:
    """``(k / 2 delta) (f(x + delta u) - f(x - delta u)) u``."""
    if not delta > 0:
        raise EstimatorError(f"smoothing radius must be positive, got {delta}")
    return (k * (f_plus - f_minus) / (2.0 * delta)) * u


def smoothed_value(family, t: int, x, delta: float, samples: int, rng: np.random.Generator):
    """Monte Carlo estimate of ``E_v f_t(x + delta v)``, ``v`` uniform in the
    unit ball.  Returns ``(mean, standard error)``."""
    if samples < 100:
        raise EstimatorError("smoothed_value needs at least 100 samples")
    x = np.asarray(x, dtype=float).reshape(-1)
    k = x.size
    V = sample_ball_batch(rng, samples, k)
    vals = family.values_at(np.full(samples, t), x + delta * V)
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(samples))


@dataclass(frozen=True)
class SmoothingSchedule:
    """Non-increasing smoothing radii ``delta_t`` in ``(0, r]``.

    kinds: ``bco_convex`` r min{1, sqrt(nu k) / t^(1/4)}; ``bco_strongly``
    r min{1, (nu^2 k^2 ln t / t)^(1/3)}; ``twopoint_convex`` r / sqrt(t);
    ``twopoint_strongly`` r / t; ``fixed`` a constant ``delta`` (default r).
    ``horizon`` set on a non-fixed kind freezes the radius at its round-T value.
    """

    kind: str
    r: float
    nu: float = 1.0
    k: int = 1
    horizon: int | None = None
    delta: float | None = None

    KINDS = ("bco_convex", "bco_strongly", "twopoint_convex", "twopoint_strongly", "fixed")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise EstimatorError(f"unknown smoothing schedule {self.kind!r}; choose from {self.KINDS}")
        if not self.r > 0:
            raise EstimatorError("r must be positive")
        if self.kind == "fixed":
            d = self.r if self.delta is None else float(self.delta)
            if not 0 < d <= self.r:
                raise EstimatorError(f"fixed smoothing radius {d} outside (0, {self.r}]")

    def delta_at(self, t: int) -> float:
        if t < 1:
            raise EstimatorError("rounds start at 1")
        if self.kind == "fixed":
            return self.r if self.delta is None else float(self.delta)
        if self.horizon is not None:
            t = self.horizon
        r = self.r
        if self.kind == "bco_convex":
            return r * min(1.0, math.sqrt(self.nu * self.k) / t ** 0.25)
        if self.kind == "bco_strongly":
            # ln t / t increases below t = e; holding it at its t = e value keeps
            # the radius positive and non-increasing
            te = max(float(t), math.e)
            return r * min(1.0, (self.nu ** 2 * self.k ** 2 * math.log(te) / te) ** (1.0 / 3.0))
        if self.kind == "twopoint_convex":
            return r / math.sqrt(t)
        return r / t

    def radii(self, T: int) -> np.ndarray:
        return np.array([self.delta_at(t) for t in range(1, T + 1)])
