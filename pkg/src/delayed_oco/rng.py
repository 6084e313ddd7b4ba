"""Named counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, *path)``, so the draws of
one component never depend on how many numbers another component consumed.
"""
from __future__ import annotations

import numpy as np

GENERATOR = "Philox"

# stream tags
LOSS = 1
DELAYS = 2
PLAYER = 3


def stream(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def unit_ball_points(seed: int, path: tuple, n: int, k: int) -> np.ndarray:
    """``n`` points uniform in the unit ``k``-ball.

    Directions and radii come from separate streams, so the first ``m`` points
    are the same for every ``n >= m``.
    """
    u = stream(seed, *path, 0).standard_normal((n, k))
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    rad = stream(seed, *path, 1).random(n) ** (1.0 / k)
    return u / norms * rad[:, None]


def uniform_interval(seed: int, path: tuple, n: int, lo: float, hi: float) -> np.ndarray:
    return lo + (hi - lo) * stream(seed, *path).random(n)
