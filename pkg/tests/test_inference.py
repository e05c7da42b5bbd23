import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hawkesrank.data_io import EventRecord, make_dataset
from hawkesrank.inference import (
    FitConfig,
    Layout,
    SampleConfig,
    SamplerError,
    adaptive_metropolis,
    decode_pair,
    decode_states,
    draws_from_params,
    from_unconstrained,
    map_fit,
    params_from_dict,
    params_to_dict,
    read_draws,
    sample_posterior,
    split_by_state,
    to_unconstrained,
    write_draws,
)
from hawkesrank.models import (
    ChpParams,
    CmmhpParams,
    DchpParams,
    EtaParams,
    ImmhpParams,
    PairRates,
    PoissonParams,
    simulate_network,
)
from hawkesrank.pointproc import HawkesParams, simulate_hawkes
from oracles import enumerate_paths

ETA = EtaParams(1.5, 0.5, 2.0)


def random_params(rng, tag, n):
    u = lambda *s: rng.uniform(0.05, 2.0, s) if s else float(rng.uniform(0.05, 2.0))
    f = rng.uniform(0.01, 0.99, n)
    eta = EtaParams(*rng.uniform(0.05, 3.0, 3))
    if tag == "chp":
        return ChpParams(u(), eta, u(), f)
    if tag == "dchp":
        return DchpParams(u(n), u(n), eta, u(), f)
    if tag == "cmmhp":
        return CmmhpParams(u(n), u(n), u(), eta, u(), f)
    if tag == "immhp":
        return ImmhpParams(*(u(n, n) for _ in range(6)))
    rates = u(n, n)
    np.fill_diagonal(rates, 0.0)
    return PoissonParams(rates)


# ---------------------------------------------------------------- transforms


@pytest.mark.parametrize("tag", ["chp", "dchp", "cmmhp", "immhp", "poisson"])
def test_round_trip(tag, rng):
    for _ in range(20):
        p = random_params(rng, tag, 4)
        lay = Layout.for_model(tag, 4)
        x = lay.flatten(p)
        u = to_unconstrained(p)
        back = lay.flatten(from_unconstrained(u))
        mask = np.isfinite(x)
        np.testing.assert_allclose(back[mask], x[mask], rtol=1e-12, atol=1e-12)


@given(st.lists(st.floats(-15, 15), min_size=11, max_size=11))
def test_theta_round_trip(th):
    lay = Layout.for_model("cmmhp", 2)
    th = np.array(th)
    np.testing.assert_allclose(lay.to_theta(lay.from_theta(th)), th, atol=1e-7)


def test_transform_examples():
    p = ChpParams(1.0, EtaParams(1.0, 2.0, 3.0), 1.0, np.array([0.5, 0.25]))
    th = to_unconstrained(p).theta
    assert th[0] == 0.0 and th[4] == 0.0  # baseline and beta at 1 -> log 0
    assert th[5] == 0.0  # f = 0.5 -> logit 0
    assert th[6] == pytest.approx(math.log(1 / 3))
    u = to_unconstrained(p)
    assert u.log_jacobian == pytest.approx(math.log(2) + math.log(3) + math.log(0.25) + math.log(0.1875))


def test_boundary_nudge_warns():
    p = ChpParams(0.2, ETA, 1.0, np.array([0.0, 1.0, 0.5]))
    with pytest.warns(UserWarning, match="nudged"):
        th = to_unconstrained(p).theta
    assert np.all(np.isfinite(th))
    f = from_unconstrained(th, Layout.for_model("chp", 3)).f
    assert f[0] == pytest.approx(1e-9, rel=1e-6) and f[1] == pytest.approx(1 - 1e-9, abs=1e-15)


def test_params_dict_round_trip(rng):
    p = random_params(rng, "cmmhp", 3)
    q = params_from_dict(params_to_dict(p))
    np.testing.assert_array_equal(Layout.for_model("cmmhp", 3).flatten(q), Layout.for_model("cmmhp", 3).flatten(p))
    with pytest.raises(ValueError):
        params_from_dict({"model": "chp", "n_nodes": 2, "values": {"baseline": 1.0}})


# ---------------------------------------------------------------- MAP


def test_hawkes_recovery():
    true = HawkesParams(0.3, 0.8, 1.5)
    times = simulate_hawkes(true, 2000.0, 7)
    fit = map_fit("hawkes", times, 2000.0, FitConfig(restarts=2))
    est = fit.params
    for a, b in ((est.baseline, 0.3), (est.alpha, 0.8), (est.beta, 1.5)):
        assert abs(a - b) / b < 0.15
    assert fit.converged


def test_zero_event_shrinkage():
    ds = make_dataset([], n_nodes=3, horizon=10.0)
    fit = map_fit("dchp", ds, 10.0, FitConfig(restarts=1))
    assert np.all(fit.params.gamma < 1e-4) and np.all(fit.params.zeta < 1e-4)


def test_map_deterministic_and_improves():
    p = ChpParams(0.1, ETA, 2.0, np.array([0.9, 0.6, 0.3, 0.1]))
    ds, _ = simulate_network(p, 40.0, 3)
    cfg = FitConfig(restarts=2, seed=4)
    a = map_fit("dchp", ds, 40.0, cfg)
    b = map_fit("dchp", ds, 40.0, cfg)
    lay = Layout.for_model("dchp", 4)
    np.testing.assert_array_equal(lay.flatten(a.params), lay.flatten(b.params))
    assert a.log_posterior == b.log_posterior
    from hawkesrank.models import log_posterior

    assert a.log_posterior == pytest.approx(log_posterior(a.params, ds, 40.0), rel=1e-10)
    from hawkesrank.inference import initial_params, as_network

    assert a.log_posterior >= log_posterior(initial_params("dchp", as_network(ds), 40.0), ds, 40.0)


def test_map_cmmhp_and_immhp_run():
    p = CmmhpParams(np.full(3, 0.05), np.full(3, 0.05), 2.0, ETA, 2.0, np.array([0.9, 0.5, 0.1]))
    ds, _ = simulate_network(p, 30.0, 11)
    a = map_fit("cmmhp", ds, 30.0, FitConfig(restarts=1, max_iter=100))
    assert math.isfinite(a.log_posterior) and a.params.f.shape == (3,)
    b = map_fit("immhp", ds, 30.0, FitConfig(max_iter=100))
    assert math.isfinite(b.log_posterior) and b.params.lam0.shape == (3, 3)


# ---------------------------------------------------------------- sampler


def test_standard_normal_variances():
    rng = np.random.default_rng(5)
    draws, lps, acc, _ = adaptive_metropolis(lambda x: -0.5 * float(x @ x), np.zeros(2), 2000, 50_000, rng, thin=5)
    assert draws.shape == (50_000, 2) and np.all(np.isfinite(lps))
    np.testing.assert_allclose(draws.var(0), 1.0, atol=0.03)
    assert 0.15 < acc < 0.5


def test_sampler_aborts_when_everything_rejected():
    rng = np.random.default_rng(0)
    wall = lambda x: 0.0 if abs(x[0]) < 1e-300 else -math.inf
    with pytest.raises(SamplerError, match="rejected"):
        adaptive_metropolis(wall, np.zeros(1), 50, 10, rng)


def test_prior_sampling_moments():
    ds = make_dataset([], n_nodes=3, horizon=1.0)
    cfg = SampleConfig(chains=4, warmup=2000, draws=2500, thin=10, seed=2, use_likelihood=False)
    draws = sample_posterior("chp", ds, 1.0, cfg)
    assert len(draws) == 10_000
    f = draws.column("f")
    assert np.all((f > 0) & (f < 1))
    np.testing.assert_allclose(f.mean(0), 0.5, atol=0.02)
    beta = draws.column("beta")[:, 0]
    assert beta.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=0.02)


def test_sampler_chains_deterministic_and_finite(tmp_path):
    p = ChpParams(0.1, ETA, 2.0, np.array([0.9, 0.5, 0.1]))
    ds, _ = simulate_network(p, 30.0, 3)
    cfg = SampleConfig(chains=2, warmup=300, draws=200, seed=9)
    a = sample_posterior("chp", ds, 30.0, cfg)
    b = sample_posterior("chp", ds, 30.0, cfg)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta[a.chain == 0], a.theta[a.chain == 1])
    assert np.all(np.isfinite(a.log_posterior))
    assert a.split_rhat().shape == (a.layout.dim,)
    path = tmp_path / "draws.csv"
    write_draws(a, path)
    c = read_draws(path)
    np.testing.assert_allclose(c.values(), a.values(), rtol=1e-14)
    np.testing.assert_array_equal(c.chain, a.chain)
    assert c.config["seed"] == 9
    mean, sd = a.rank_summary()
    assert mean.shape == sd.shape == (3,)


def test_draws_from_params():
    p = ChpParams(0.1, ETA, 2.0, np.array([0.9, 0.5, 0.1]))
    d = draws_from_params([p, p])
    assert len(d) == 2 and d.params(1).f[0] == pytest.approx(0.9, rel=1e-12)


# ---------------------------------------------------------------- decoding


def _random_pair(rng):
    lam0 = rng.uniform(0.05, 1.0)
    return PairRates(lam0, lam0 * (1 + rng.uniform(0, 4)), rng.uniform(0, 2), rng.uniform(0.3, 3),
                     rng.uniform(0.05, 2), rng.uniform(0.05, 2))


def test_viterbi_matches_exhaustive(rng):
    for _ in range(40):
        b = _random_pair(rng)
        T = rng.uniform(2, 10)
        times = np.sort(rng.uniform(0, T, rng.integers(1, 8)))
        paths = enumerate_paths(b, times, T)
        best = max(paths, key=paths.get)
        dec = decode_pair(b, times, T)
        assert dec.path_logprob == pytest.approx(paths[best], abs=1e-8)
        assert dec.path_logprob >= max(paths.values()) - 1e-8
        np.testing.assert_array_equal(dec.labels, best[:-1])
        # smoothed marginals against the enumeration
        vals = np.array(list(paths.values()))
        z = np.array(list(paths.keys()))
        w = np.exp(vals - np.logaddexp.reduce(vals))
        np.testing.assert_allclose(dec.interval_probs[:, 1], w @ z, atol=1e-9)
        np.testing.assert_allclose(dec.interval_probs.sum(1), 1.0, atol=1e-12)
        assert np.all((dec.prob_active >= 0) & (dec.prob_active <= 1))


def test_decoding_examples():
    times = np.array([1.0, 2.0, 3.0, 4.0])
    pinned = PairRates(0.2, 0.5, 0.7, 1.3, 0.0, 1.0)
    assert np.all(decode_pair(pinned, times, 5.0).labels == 1)
    # inactive rate far above the active one, no excitation, events at the inactive pace
    sparse = PairRates(2.0, 0.01, 0.0, 1.0, 0.5, 0.5)
    dec = decode_pair(sparse, np.array([0.5, 1.0, 1.5]), 2.0)
    paths = enumerate_paths(sparse, [0.5, 1.0, 1.5], 2.0)
    assert tuple(dec.labels) == (0, 0, 0) == max(paths, key=paths.get)[:-1]
    empty = decode_pair(pinned, [], 5.0)
    assert len(empty.labels) == 0


def test_decode_states_and_split():
    p = CmmhpParams(np.full(3, 0.05), np.full(3, 0.05), 3.0, ETA, 2.0, np.array([0.9, 0.5, 0.1]))
    ds, _ = simulate_network(p, 40.0, 21)
    dec = decode_states(p, ds, 40.0)
    assert sum(len(d.labels) for d in dec.pairs.values()) == len(ds.events)
    act, inact = split_by_state(ds, dec)
    assert len(act.events) + len(inact.events) == len(ds.events)
    assert len(act.events) == int(round(dec.active_fraction() * len(ds.events)))
