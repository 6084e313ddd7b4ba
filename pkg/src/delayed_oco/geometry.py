"""Compact convex domains (Euclidean balls and boxes) with projection."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np


class DomainError(ValueError):
    pass


def _vec(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != dim:
        raise DomainError(f"expected a {dim}-vector, got shape {x.shape}")
    return x


class Domain:
    """Common interface: ``dim``, diameter bound ``D``, radii ``r`` and ``R``.

    ``r B`` is contained in the domain and the domain in ``R B`` (balls about
    the origin).  The radii and ``D`` are stored metadata; looser constants
    than the tight ones may be declared, tighter ones are rejected.
    """

    dim: int
    D: float
    r: float
    R: float

    def project(self, x) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x, tol: float = 1e-9) -> bool:
        raise NotImplementedError

    def linear_minimizer(self, g: np.ndarray) -> np.ndarray:
        """A minimizer of ``<g, x>`` over the domain."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` points of the domain (not necessarily uniform)."""
        raise NotImplementedError

    @property
    def origin(self) -> np.ndarray:
        return np.zeros(self.dim)

    def _check_radii(self, r_tight: float, R_tight: float, D_tight: float, r, R, D):
        self.r = r_tight if r is None else float(r)
        self.R = R_tight if R is None else float(R)
        self.D = D_tight if D is None else float(D)
        if r_tight == 0.0 and self.r == 0.0:
            pass  # origin on the boundary: fine for first-order play only
        elif not 0 < self.r <= r_tight * (1 + 1e-12):
            raise DomainError(f"declared r={self.r} needs 0 < r <= {r_tight}")
        if self.R < R_tight * (1 - 1e-12):
            raise DomainError(f"declared R={self.R} below circumscribed radius {R_tight}")
        if self.D < D_tight * (1 - 1e-12):
            raise DomainError(f"declared D={self.D} below diameter {D_tight}")
        if self.r > self.R:
            raise DomainError("need r <= R")


class Ball(Domain):
    def __init__(self, center, radius: float, *, r=None, R=None, D=None):
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.dim = self.center.size
        self.radius = float(radius)
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")
        c = float(np.linalg.norm(self.center))
        if c >= self.radius:
            raise DomainError("the ball must contain the origin in its interior")
        self._centered = c == 0.0
        self._r2 = self.radius * self.radius
        self._check_radii(self.radius - c, self.radius + c, 2 * self.radius, r, R, D)

    def project(self, x) -> np.ndarray:
        x = _vec(x, self.dim)
        if self._centered:
            n2 = float(x @ x)
            if n2 <= self._r2:
                return x.copy()
            return x * (self.radius / math.sqrt(n2))
        v = x - self.center
        n2 = float(v @ v)
        if n2 <= self._r2:
            return x.copy()
        return self.center + v * (self.radius / math.sqrt(n2))

    def contains(self, x, tol: float = 1e-9) -> bool:
        v = _vec(x, self.dim) - self.center
        return math.sqrt(float(v @ v)) <= self.radius + tol

    def linear_minimizer(self, g) -> np.ndarray:
        g = _vec(g, self.dim)
        n = float(np.linalg.norm(g))
        if n == 0.0:
            return self.center.copy()
        return self.center - (self.radius / n) * g

    def sample(self, rng, n):
        u = rng.standard_normal((n, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = self.radius * rng.random(n) ** (1.0 / self.dim)
        return self.center + u * rad[:, None]

    def __repr__(self):
        return f"Ball(center={self.center.tolist()}, radius={self.radius})"


class Box(Domain):
    def __init__(self, lo, hi, *, r=None, R=None, D=None):
        self.lo = np.asarray(lo, dtype=float).reshape(-1)
        self.hi = np.asarray(hi, dtype=float).reshape(-1)
        if self.lo.shape != self.hi.shape:
            raise DomainError("lo and hi must have the same dimension")
        if not np.all(self.lo < self.hi):
            raise DomainError("need lo < hi componentwise")
        self.dim = self.lo.size
        r_tight = float(min(np.min(-self.lo), np.min(self.hi)))
        if r_tight < 0:
            raise DomainError("the box must contain the origin")
        R_tight = float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))
        self._check_radii(r_tight, R_tight, float(np.linalg.norm(self.hi - self.lo)), r, R, D)

    def project(self, x) -> np.ndarray:
        return np.clip(_vec(x, self.dim), self.lo, self.hi)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = _vec(x, self.dim)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def linear_minimizer(self, g) -> np.ndarray:
        g = _vec(g, self.dim)
        return np.where(g > 0, self.lo, np.where(g < 0, self.hi, 0.5 * (self.lo + self.hi)))

    def sample(self, rng, n):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


def shrink_factor(delta: float, r: float) -> float:
    """``1 - delta / r`` for a smoothing radius ``delta`` in ``(0, r]``."""
    if not 0 < delta <= r:
        raise DomainError(f"smoothing radius {delta} outside (0, {r}]")
    return 1.0 - delta / r


def shrink(domain: Domain, factor: float) -> Callable[[np.ndarray], np.ndarray]:
    """The map ``x -> factor * x``.

    With ``factor = 1 - delta / r`` every ``factor * x + delta * u`` (``x`` in
    the domain, ``u`` a unit vector) stays inside the domain.
    """
    if not 0.0 <= factor <= 1.0:
        raise DomainError(f"shrink factor {factor} outside [0, 1]")

    def transform(x):
        return factor * _vec(x, domain.dim)

    return transform
