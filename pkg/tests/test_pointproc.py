import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.linalg import expm

from hawkesrank.models import logistic
from hawkesrank.pointproc import (
    CtmcParams,
    HawkesParams,
    UnstableProcessError,
    ctmc_stationary,
    ctmc_transition,
    hawkes_compensator,
    hawkes_intensity,
    rescaled_times,
    simulate_ctmc,
    simulate_hawkes,
    simulate_mmhp,
)

pos = st.floats(0.01, 5.0)


def test_intensity_examples():
    p = HawkesParams(0.1, 1.0, 2.0)
    assert hawkes_intensity(p, [], 3.0) == 0.1
    assert hawkes_intensity(p, [0.0], 0.5) == pytest.approx(0.1 + math.exp(-1), abs=1e-15)
    assert hawkes_intensity(p, [0.0], 0.0) == 0.1  # strictly earlier events only
    assert hawkes_intensity(p, [0.0, 1.0], 1e6) == pytest.approx(0.1, abs=1e-12)


@given(pos, pos, pos, st.lists(st.floats(0, 10), max_size=8), st.floats(0, 12))
def test_intensity_bounds_and_jump(mu, a, b, hist, t):
    hist = sorted(hist)
    p = HawkesParams(mu, a, b)
    assert hawkes_intensity(p, hist, t) >= mu
    if hist:
        tk = hist[-1]
        jump = hawkes_intensity(p, hist, np.nextafter(tk, math.inf)) - hawkes_intensity(p, hist, tk)
        assert jump == pytest.approx(a * hist.count(tk), rel=1e-9, abs=1e-12)


def test_compensator_examples():
    p = HawkesParams(0.3, 0.7, 1.1)
    assert hawkes_compensator(p, [], 1.0, 4.0) == pytest.approx(0.9)
    assert hawkes_compensator(HawkesParams(0.0, 2.0, 2.0), [0.0], 0.0, math.inf) == 1.0
    with pytest.raises(ValueError):
        hawkes_compensator(p, [], 2.0, 1.0)


def _quad_compensator(p, hist, t0, t1):
    pts = [t for t in hist if t0 < t < t1]
    val, _ = quad(lambda s: hawkes_intensity(p, hist, s), t0, t1, points=pts or None, limit=500,
                  epsabs=0, epsrel=1e-12)
    return val


def test_compensator_matches_quadrature(rng):
    for _ in range(200):
        p = HawkesParams(*rng.uniform(0.05, 2.0, 3))
        hist = np.sort(rng.uniform(0, 10, rng.integers(0, 8)))
        t0, t1 = np.sort(rng.uniform(0, 12, 2))
        exact = hawkes_compensator(p, hist, t0, t1)
        assert abs(exact - _quad_compensator(p, hist, t0, t1)) <= 1e-8 * max(abs(exact), 1e-300)


@given(pos, pos, pos, st.lists(st.floats(0, 10), max_size=8), st.floats(0, 4), st.floats(0, 4), st.floats(0, 4))
def test_compensator_additivity(mu, a, b, hist, x, y, z):
    p = HawkesParams(mu, a, b)
    t0, t1, t2 = x, x + y, x + y + z
    lhs = hawkes_compensator(p, hist, t0, t1) + hawkes_compensator(p, hist, t1, t2)
    assert lhs == pytest.approx(hawkes_compensator(p, hist, t0, t2), abs=1e-10)


def test_simulate_poisson_mean_and_empty():
    p = HawkesParams(0.8, 0.0, 1.0)
    counts = np.array([len(simulate_hawkes(p, 20.0, s)) for s in range(1000)])
    se = counts.std(ddof=1) / math.sqrt(len(counts))
    assert abs(counts.mean() - 16.0) < 3 * se
    assert len(simulate_hawkes(HawkesParams(0.0, 0.5, 1.0), 50.0, 1)) == 0


def test_simulate_martingale_mean():
    p = HawkesParams(0.4, 0.9, 1.5)
    T = 15.0
    sims = [simulate_hawkes(p, T, s) for s in range(800)]
    diff = np.array([len(h) - hawkes_compensator(p, h, 0.0, T) for h in sims])
    assert abs(diff.mean()) < 3 * diff.std(ddof=1) / math.sqrt(len(diff))


def test_simulate_reproducible_and_stability_guard():
    p = HawkesParams(0.5, 0.9, 1.0)
    assert np.array_equal(simulate_hawkes(p, 30.0, 7), simulate_hawkes(p, 30.0, 7))
    with pytest.raises(UnstableProcessError):
        simulate_hawkes(HawkesParams(0.5, 1.0, 1.0), 10.0, 0)
    assert len(simulate_hawkes(HawkesParams(0.5, 1.2, 1.0), 3.0, 0, allow_unstable=True)) >= 0


def test_simulate_history_carry_in():
    p = HawkesParams(0.0, 0.9, 1.0)
    assert len(simulate_hawkes(p, 10.0, 0, start=5.0)) == 0
    n = np.mean([len(simulate_hawkes(p, 10.0, s, start=5.0, history=[5.0])) for s in range(400)])
    assert n > 1.0  # expected 0.9/(1-0.9) * (1 - small) offspring


def test_ctmc_transition_examples():
    c = CtmcParams(1.0, 1.0)
    assert np.array_equal(ctmc_transition(c, 0.0), np.eye(2))
    assert ctmc_transition(c, math.log(2))[0, 0] == pytest.approx(0.625, abs=1e-15)
    c2 = CtmcParams(0.3, 1.7)
    lim = ctmc_transition(c2, 1e3)
    assert np.allclose(lim, [[0.85, 0.15], [0.85, 0.15]], atol=1e-12)


@given(st.floats(1e-3, 5), st.floats(1e-3, 5), st.floats(0, 10), st.floats(0, 10))
def test_ctmc_rows_semigroup_and_expm(q1, q0, a, b):
    c = CtmcParams(q1, q0)
    Pa, Pb = ctmc_transition(c, a), ctmc_transition(c, b)
    assert np.all(np.abs(Pa.sum(1) - 1) < 1e-12)
    assert np.allclose(Pa @ Pb, ctmc_transition(c, a + b), atol=1e-10, rtol=0)
    Q = np.array([[-q1, q1], [q0, -q0]])
    assert np.allclose(Pa, expm(Q * a), atol=1e-10, rtol=0)


def test_stationary_examples():
    assert ctmc_stationary(CtmcParams(2.0, 2.0)) == (0.5, 0.5)
    eta3, fi, fj = 1.46, 1.0, 0.0
    pa, _ = ctmc_stationary(CtmcParams(math.exp(-eta3 * fi), math.exp(-eta3 * fj)))
    assert pa == pytest.approx(logistic(1.46), abs=1e-15)
    assert pa == pytest.approx(0.8115, abs=5e-5)


def test_simulate_ctmc_examples():
    tr = simulate_ctmc(CtmcParams(1e-12, 1.0), 1, 100.0, 0)
    assert len(tr.switch_times) == 0 and tr.active_time() == 100.0
    T = 1e4
    c = CtmcParams(1.0, 1.0)
    tr = simulate_ctmc(c, 1, T, 3)
    assert abs(tr.active_time() / T - 0.5) < 0.02
    c = CtmcParams(0.7, 0.4)
    rates = [len(simulate_ctmc(c, 0, 2000.0, s).switch_times) / 2000.0 for s in range(20)]
    expected = 2 * 0.7 * 0.4 / 1.1
    assert abs(np.mean(rates) - expected) < 3 * np.std(rates, ddof=1) / math.sqrt(20)
    assert np.all(np.diff(tr.switch_times) > 0)


def test_mmhp_degenerate_chains():
    h = HawkesParams(0.3, 0.6, 1.5)
    T = 20.0
    active = [len(simulate_mmhp(h, 0.05, CtmcParams(0.0, 1.0), T, s, z0=1)[0]) for s in range(1000)]
    plain = [len(simulate_hawkes(h, T, 10_000 + s)) for s in range(1000)]
    se = math.sqrt(np.var(active, ddof=1) / 1000 + np.var(plain, ddof=1) / 1000)
    assert abs(np.mean(active) - np.mean(plain)) < 3 * se
    inactive = [len(simulate_mmhp(h, 0.5, CtmcParams(1.0, 0.0), T, s, z0=0)[0]) for s in range(1000)]
    assert abs(np.mean(inactive) - 10.0) < 3 * np.std(inactive, ddof=1) / math.sqrt(1000)


def test_mmhp_conditional_poisson():
    h = HawkesParams(2.0, 0.0, 1.0)
    ratios = []
    diffs = []
    for s in range(300):
        times, tr = simulate_mmhp(h, 0.0, CtmcParams(0.5, 0.5), 20.0, s)
        for t in times:
            assert tr.state_at(t) == 1 or t in tr.switch_times
        diffs.append(len(times) - 2.0 * tr.active_time())
    assert abs(np.mean(diffs)) < 3 * np.std(diffs, ddof=1) / math.sqrt(len(diffs))


def test_mmhp_excitation_crosses_states():
    # Excitation from inactive-state events must carry into the active state:
    # with lam1 = 0 only that carried excitation can fire active events.
    h = HawkesParams(0.0, 0.9, 0.5)
    n_active = 0
    for s in range(200):
        times, tr = simulate_mmhp(h, 3.0, CtmcParams(5.0, 5.0), 10.0, s, allow_unstable=True)
        n_active += sum(tr.state_at(t) == 1 for t in times)
    assert n_active > 0


def test_mmhp_reproducible():
    h = HawkesParams(0.3, 0.6, 1.5)
    a = simulate_mmhp(h, 0.1, CtmcParams(0.4, 0.2), 30.0, 11)
    b = simulate_mmhp(h, 0.1, CtmcParams(0.4, 0.2), 30.0, 11)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1].switch_times, b[1].switch_times)


def test_rescaled_times_examples():
    lam = 0.7
    vals = rescaled_times(lambda a, b: lam * (b - a), [1.0, 3.0])
    assert vals == pytest.approx([0.7, 1.4])
    p = HawkesParams(0.3, 0.5, 1.0)
    single = rescaled_times(lambda a, b: hawkes_compensator(p, [2.0], a, b), [2.0])
    assert single == [hawkes_compensator(p, [2.0], 0.0, 2.0)]
    assert rescaled_times(lambda a, b: 1.0, []) == []
