import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayed_oco.geometry import Ball, Box
from delayed_oco.losses import (
    ComparatorError,
    LinearStream,
    LossError,
    QuadraticStream,
    SmoothedPiecewise,
    SumFamily,
    build_family,
)

B2 = Ball(np.zeros(2), 1.0)


def families(domain, T=30, seed=0):
    return [
        LinearStream(domain, T, seed, bias=[0.3] + [0.0] * (domain.dim - 1)),
        QuadraticStream(domain, T, seed, lam=1.5, linear_scale=0.2),
        SmoothedPiecewise(domain, T, seed, width=0.05, direction=np.ones(domain.dim)),
        build_family("sum", domain, T, seed, parts=[{"kind": "linear"}, {"kind": "quadratic", "lam": 0.5}]),
    ]


def test_value_examples():
    lin = LinearStream(B2, 1, vectors=[[1.0, 0.0]])
    assert lin.value(1, [0.5, 0.0]) == 0.5
    assert lin.grad(1, [0.1, 0.2]).tolist() == [1.0, 0.0]
    q = QuadraticStream(B2, 1, lam=2.0, centers=[[0.0, 0.0]])
    assert q.value(1, [0.6, 0.8]) == pytest.approx(1.0)
    assert np.allclose(q.grad(1, [0.6, -0.8]), [1.2, -1.6])


def test_checked_oracles_reject_bad_inputs():
    lin = LinearStream(B2, 3)
    with pytest.raises(LossError):
        lin.value(4, [0, 0])
    with pytest.raises(LossError):
        lin.value(1, [2.0, 0.0])
    with pytest.raises(LossError):
        lin.value(1, [0.0, 0.0, 0.0])
    with pytest.raises(LossError):
        LinearStream(B2, 3, bias=[0.8, 0.0], spread=0.5)


def test_deterministic_and_prefix_stable():
    rng = np.random.default_rng(0)
    X = B2.sample(rng, 100)
    rounds = rng.integers(1, 51, size=100)
    for kind in ("linear", "quadratic", "piecewise"):
        a = build_family(kind, B2, 50, 7)
        b = build_family(kind, B2, 50, 7)
        longer = build_family(kind, B2, 80, 7)
        assert np.array_equal(a.values_at(rounds, X), b.values_at(rounds, X))
        assert np.array_equal(a.values_at(rounds, X), longer.values_at(rounds, X))
        one_by_one = [a.value(int(t), x) for t, x in zip(rounds, X)]
        assert np.allclose(one_by_one, a.values_at(rounds, X), rtol=0, atol=1e-12)


@pytest.mark.parametrize("idx", range(4))
def test_gradients_match_finite_differences(idx):
    dom = Ball(np.zeros(3), 1.0)
    fam = families(dom)[idx]
    rng = np.random.default_rng(idx)
    h = 1e-6
    for _ in range(50):
        t = int(rng.integers(1, fam.horizon + 1))
        x = dom.sample(rng, 1)[0] * 0.9
        g = fam.grad(t, x)
        fd = np.array([(fam.value(t, x + h * e) - fam.value(t, x - h * e)) / (2 * h) for e in np.eye(3)])
        assert np.allclose(g, fd, atol=1e-5)
        assert np.allclose(fam.grads_at([t], x[None])[0], g, atol=1e-12)


@pytest.mark.parametrize("idx", range(4))
@settings(max_examples=60, deadline=None)
@given(a=st.floats(0, 1), s=st.integers(0, 10_000))
def test_convexity_along_segments(idx, a, s):
    fam = families(B2)[idx]
    rng = np.random.default_rng(s)
    x, y = B2.sample(rng, 2)
    t = int(rng.integers(1, fam.horizon + 1))
    m = a * x + (1 - a) * y
    lhs = fam.value(t, m)
    rhs = a * fam.value(t, x) + (1 - a) * fam.value(t, y) - 0.5 * fam.lam * a * (1 - a) * np.sum((x - y) ** 2)
    assert lhs <= rhs + 1e-10


@pytest.mark.parametrize("idx", range(4))
def test_declared_constants_hold(idx):
    rep = families(Box([-1, -1], [1, 0.5]))[idx].validate_constants(n=5000)
    assert rep["gradient_bound_ok"] and rep["value_bound_ok"] and rep["strong_convexity_ok"]


def test_comparator_common_interior_center():
    q = QuadraticStream(B2, 40, lam=1.0, centers=[[0.2, -0.3]] * 40)
    assert np.allclose(q.best_in_hindsight().x, [0.2, -0.3], atol=1e-6)


def test_comparator_linear_over_ball():
    dom = Ball(np.zeros(3), 2.0)
    lin = LinearStream(dom, 25, 3, bias=[0.1, 0.2, 0.0])
    abar = lin.a.sum(axis=0)
    assert np.allclose(lin.best_in_hindsight().x, -2.0 * abar / np.linalg.norm(abar))


def _grid_refine(fam, T, dom, centre, half, step):
    g = np.arange(-half, half + step / 2, step)
    P = np.array([[centre[0] + a, centre[1] + b] for a in g for b in g])
    P = P[[dom.contains(p, tol=0) for p in P]]
    vals = np.zeros(len(P))
    for t in range(1, T + 1):
        vals += fam.values_at(np.full(len(P), t), P)
    i = int(np.argmin(vals))
    return P[i], float(vals[i])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_comparator_matches_grid_on_mixed_family(seed):
    T = 50
    dom = B2
    fam = build_family("sum", dom, T, seed, parts=[
        {"kind": "linear", "bias": [0.2, -0.1]},
        {"kind": "quadratic", "lam": 0.3, "center": [0.4, 0.4], "center_radius": 0.5},
        {"kind": "piecewise", "direction": [1.0, -1.0], "width": 0.01},
    ])
    comp = fam.best_in_hindsight(T)
    assert dom.contains(comp.x)
    p, v = _grid_refine(fam, T, dom, np.zeros(2), 1.0, 1e-2)
    p, v_fine = _grid_refine(fam, T, dom, p, 2e-2, 1e-3)
    p, v_ref = _grid_refine(fam, T, dom, p, 2e-3, 2e-5)
    assert comp.total <= v_fine + 1e-4
    assert abs(comp.total - v_ref) <= 1e-4


def test_comparator_piecewise_on_box_matches_grid():
    dom = Box([-1, -1], [1, 1])
    fam = SmoothedPiecewise(dom, 30, 4, direction=[1.0, 2.0], width=0.02, offset_range=2.0)
    comp = fam.best_in_hindsight()
    p, v = _grid_refine(fam, 30, dom, np.zeros(2), 1.0, 1e-2)
    p, v = _grid_refine(fam, 30, dom, p, 2e-2, 1e-3)
    assert comp.total <= v + 1e-6


def test_comparator_budget_exhaustion_reports_mapping_norm():
    fam = build_family("sum", B2, 20, 0, parts=[{"kind": "piecewise", "width": 1e-3},
                                                 {"kind": "piecewise", "direction": [0.0, 1.0]}])
    with pytest.raises(ComparatorError) as exc:
        fam.best_in_hindsight(eps_opt=1e-14, budget=3)
    assert exc.value.mapping_norm > 0


def test_sum_requires_shared_domain():
    with pytest.raises(LossError):
        SumFamily([LinearStream(B2, 5), LinearStream(Ball(np.zeros(2), 1.0), 5)])
    with pytest.raises(LossError):
        build_family("cubic", B2, 5, 0)
