import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayed_oco.base_olo import (
    OMD,
    PFTRL,
    BaseLearner,
    BaseUpdatePacket,
    BCORate,
    DriftRegretLedger,
    GeneralRate,
    LearnerError,
    TwoPointRate,
    check_ledger,
    evaluate_drift_regret,
    lr_2p,
    lr_bco,
    lr_general,
    lr_strongly,
    make_learner,
    pftrl_objective,
)
from delayed_oco.geometry import Ball, Box
from delayed_oco.harness import audit_learner_stream
from delayed_oco.timeline import profile_of, schedule_from


def interval(a):
    return Box([-a], [a])


def grid_argmin(cs, zs, etas, lo, hi, step=1e-4):
    """Brute-force minimiser of the proximal objective on a 1-d grid."""
    g = np.arange(lo, hi + step / 2, step)
    val = np.zeros_like(g)
    prev = 0.0
    for c, zm, eta in zip(cs, zs, etas):
        a = 1.0 / eta - prev
        prev = 1.0 / eta
        val += c * g + 0.5 * a * (g - zm) ** 2
    return g[int(np.argmin(val))]


def test_pftrl_examples():
    p = PFTRL(interval(1.0))
    p.step([1.0], 0.1)
    assert p.step([-2.0], 0.1)[0] == pytest.approx(0.1)
    p = PFTRL(interval(2.0))
    assert p.step([1.0], 1.0)[0] == pytest.approx(-1.0)
    assert p.step([1.0], 0.5)[0] == pytest.approx(-1.5)
    p = PFTRL(interval(1.0))
    assert p.step([5.0], 1.0)[0] == -1.0


def test_pftrl_two_step_example_against_grid():
    z2 = grid_argmin([1.0], [0.0], [1.0], -2, 2)
    z3 = grid_argmin([1.0, 1.0], [0.0, z2], [1.0, 0.5], -2, 2)
    assert (z2, z3) == pytest.approx((-1.0, -1.5), abs=1e-4)


def test_omd_examples():
    assert OMD(interval(1.0)).step([1.0], 0.5)[0] == -0.5
    o = OMD(interval(1.0), z1=[0.9])
    assert o.step([-1.0], 0.5)[0] == 1.0
    assert np.allclose(OMD(Ball(np.zeros(2), 1.0)).step([3.0, 4.0], 0.5), [-0.6, -0.8])


@pytest.mark.parametrize("seed", range(30))
def test_pftrl_matches_grid_argmin(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 21))
    A = 1.0
    p = PFTRL(interval(A))
    cs = rng.uniform(-1, 1, size=N)
    etas = np.sort(rng.uniform(0.05, 2.0, size=N))[::-1]
    zs = []
    for n in range(N):
        zs.append(float(p.z[0]))
        p.step([cs[n]], float(etas[n]))
    ref = grid_argmin(cs, zs, etas, -A, A)
    assert abs(p.z[0] - ref) <= 1e-3
    # the module's objective agrees with the grid values at the closed-form point
    assert pftrl_objective([p.z[0]], [[c] for c in cs], [[z] for z in zs], etas) <= \
        pftrl_objective([ref], [[c] for c in cs], [[z] for z in zs], etas) + 1e-9


def test_learner_validation():
    p = PFTRL(Ball(np.zeros(2), 1.0))
    with pytest.raises(LearnerError):
        p.step([1.0, 0.0], 0.0)
    with pytest.raises(LearnerError):
        p.step([1.0, 0.0], math.inf)
    with pytest.raises(LearnerError):
        p.step([1.0], 0.1)
    with pytest.raises(LearnerError):
        p.step([math.nan, 0.0], 0.1)
    p.step([1.0, 0.0], 0.1)
    with pytest.raises(LearnerError, match="increased"):
        p.step([1.0, 0.0], 0.2)
    with pytest.raises(LearnerError):
        make_learner("adam", Ball(np.zeros(2), 1.0))


def test_rate_examples():
    assert lr_general(1, 0, 1, 1) == 1.0
    assert lr_general(3, 1 + 2 + 2, 1, 1) == pytest.approx(1 / math.sqrt(8))
    p = profile_of(schedule_from([4, 2, 0, 0, 0]))
    assert lr_general(5, int(p.sigma_star.sum()), 1, 1) == pytest.approx(1 / math.sqrt(11))
    assert lr_strongly(1, 1) == 1 and lr_strongly(5, 2) == pytest.approx(0.1)
    assert lr_strongly(10, 0.5) == pytest.approx(0.2)
    assert lr_bco(1, 0, 1.0, 1, 1, 1, 1, 1) == pytest.approx(1 / math.sqrt(2))
    assert lr_2p(1, 0, 1, 1, 4) == 0.5
    assert lr_2p(2, 1, 1, 1, 1) == pytest.approx(1 / math.sqrt(3))


def test_bco_rate_constant_radius_closed_form():
    nu, k, r, delta = 0.7, 3, 0.5, 0.2
    s = BCORate(2.0, 1.5, nu, k, r)
    for n in range(1, 20):
        eta = s.next(BaseUpdatePacket(np.zeros(k), 0, 0, delta))
        assert eta == pytest.approx((2.0 / 1.5) / math.sqrt(n * (1 + (nu * k * r / delta) ** 2)))
    with pytest.raises(LearnerError):
        s.next(BaseUpdatePacket(np.zeros(k), 0, 0, None))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10), st.floats(0.01, 1.0)), min_size=1, max_size=12))
def test_rate_schedules_recompute_prefix_sums(stream):
    bco = BCORate(1.0, 2.0, 0.5, 2, 1.0)
    tp = TwoPointRate(1.0, 2.0, 2)
    gen = GeneralRate(1.0, 2.0)
    prev = math.inf
    for n, (out, dp) in enumerate(stream, start=1):
        pkt = BaseUpdatePacket(np.zeros(2), 0, out, dp)
        e1, e2, e3 = bco.next(pkt), tp.next(pkt), gen.next(pkt)
        S = sum(o for o, _ in stream[:n])
        Dt = sum(1 / d ** 2 for _, d in stream[:n])
        assert e1 == pytest.approx(0.5 / math.sqrt(n + S + 1.0 * Dt))
        assert e2 == pytest.approx(0.5 / math.sqrt(2 * n + S))
        assert e3 == pytest.approx(0.5 / math.sqrt(n + S))
        assert e1 <= prev
        prev = e1


def test_ledger_single_step():
    base = BaseLearner(make_learner("pftrl", interval(2.0)), GeneralRate(4.0, 1.0))
    base.update(BaseUpdatePacket(np.array([1.0]), 0, 0))
    led = base.ledger
    assert led.linear_regret([1.0]) == -1.0
    assert led.drift() == 0.0
    for W in (0.0, 1.0, 100.0):
        assert evaluate_drift_regret(led, [1.0], W) == -1.0


def test_zero_lag_has_no_drift():
    base = BaseLearner(make_learner("omd", Ball(np.zeros(2), 1.0)), GeneralRate(2.0, 1.0))
    rng = np.random.default_rng(0)
    for _ in range(30):
        base.update(BaseUpdatePacket(rng.standard_normal(2), 0, 0))
    assert base.ledger.drift() == 0.0 and base.ledger.H_eta() == 0.0


def test_ledger_matches_recomputation():
    rng = np.random.default_rng(1)
    p = profile_of(schedule_from(np.minimum(rng.integers(0, 8, 40), 40 - np.arange(1, 41))))
    lags = p.d_star[p.rho - 1]
    outs = p.sigma_star[p.rho - 1]
    base = BaseLearner(make_learner("pftrl", Ball(np.zeros(3), 1.0)), GeneralRate(2.0, 1.0))
    zs, cs, etas = [], [], []
    for n in range(40):
        c = rng.standard_normal(3)
        zs.append(base.z.copy())
        cs.append(c)
        base.update(BaseUpdatePacket(c, int(lags[n]), int(outs[n])))
        etas.append(base.schedule.value())
    u = np.array([0.1, -0.2, 0.3])
    lin = sum(float(c @ (z - u)) for c, z in zip(cs, zs))
    drift = sum(float(np.linalg.norm(zs[n - lags[n]] - zs[n])) for n in range(40))
    H = sum(1 - etas[n] / etas[n - lags[n]] for n in range(40))
    led = base.ledger
    assert led.linear_regret(u) == pytest.approx(lin, abs=1e-12)
    assert led.drift() == pytest.approx(drift, abs=1e-12)
    assert led.H_eta() == pytest.approx(H, abs=1e-12)
    assert evaluate_drift_regret(led, u, 3.0) == pytest.approx(lin + 3 * drift)


@pytest.mark.parametrize("learner", ["pftrl", "omd"])
@pytest.mark.parametrize("seed", range(10))
def test_learner_guarantees_on_random_streams(learner, seed):
    res = audit_learner_stream(seed, learner)
    bad = {k: v for k, v in res["checks"].items() if not v["passed"]}
    assert not bad, bad


def test_check_ledger_detects_a_violation():
    base = BaseLearner(make_learner("pftrl", Ball(np.zeros(2), 1.0)), GeneralRate(2.0, 1.0))
    rng = np.random.default_rng(2)
    for _ in range(10):
        base.update(BaseUpdatePacket(rng.standard_normal(2), 0, 0))
    base.ledger._z[5] = base.ledger._z[5] + 10.0  # corrupt one iterate
    out = check_ledger(base.ledger, 2.0, "pftrl", [np.zeros(2)])
    assert not out["per_step_drift"][0]
    assert not out["lagged_drift"][0]


def test_ledger_rejects_impossible_lags():
    led = DriftRegretLedger(1)
    led.record(np.array([1.0]), np.array([0.0]), 1, 0, 1.0)
    with pytest.raises(LearnerError):
        led.drift()
