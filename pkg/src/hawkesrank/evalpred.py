"""Goodness-of-fit diagnostics and posterior-predictive evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kstwo, poisson

from . import _kernels
from .baselines import GlickoConfig, glicko_path
from .data_io import EventDataset
from .models import (
    ChpParams,
    CmmhpParams,
    DchpParams,
    ImmhpParams,
    Network,
    PoissonParams,
    _hawkes_arrays,
    as_network,
    mmhp_arrays,
    pair_intensities,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- K-S


def ks_statistic(values) -> float:
    """Two-sided K-S distance between the empirical law of ``values`` and Exp(1).

    NaN for an empty sample.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    if n == 0:
        return math.nan
    if np.any(x < 0):
        raise ValueError("rescaled times must be nonnegative")
    F = -np.expm1(-x)
    k = np.arange(1, n + 1)
    return float(max(np.max(k / n - F), np.max(F - (k - 1) / n)))


def ks_critical_value(n: int, level: float = 0.05) -> float:
    """Exact two-sided critical value of the K-S statistic for sample size ``n``."""
    if n < 1:
        return math.nan
    return float(kstwo.ppf(1.0 - level, n))


@dataclass
class KsMatrix:
    """Per-pair K-S statistics; NaN on the diagonal and for pairs without events."""

    stat: np.ndarray
    sizes: np.ndarray

    def critical(self, level: float = 0.05) -> np.ndarray:
        out = np.full(self.stat.shape, np.nan)
        for (i, j), n in np.ndenumerate(self.sizes):
            if i != j and n > 0:
                out[i, j] = ks_critical_value(int(n), level)
        return out

    def pass_rate(self, level: float = 0.05, min_events: int = 1) -> float:
        """Fraction of pairs with at least ``min_events`` events not rejected at ``level``."""
        mask = (self.sizes >= min_events) & ~np.eye(len(self.sizes), dtype=bool)
        if not mask.any():
            return math.nan
        return float(np.mean(self.stat[mask] <= self.critical(level)[mask]))


def _pair_pieces(p, net: Network, T: float):
    """Per pair, the fitted compensator over each interval (t_{m-1}, t_m], m = 1..M+1.

    MMHP families mix the two state compensators with the smoothed state
    probabilities of each interval.
    """
    out = []
    if isinstance(p, (CmmhpParams, ImmhpParams)):
        a = mmhp_arrays(p, net)
        for k in range(net.n_pairs):
            times = net.pair_times(k)
            args = (a["lam0"][k], a["lam1"][k], a["alpha"][k], a["beta"][k], a["q1"][k], a["q0"][k],
                    a["p_active"][k], times, float(T))
            gam, _ = _kernels.mmhp_forward_backward(*args)
            dur = np.diff(np.concatenate([[0.0], times, [T]]))
            comp1 = _kernels.hawkes_interval_compensators(a["lam1"][k], a["alpha"][k], a["beta"][k], times, float(T))
            out.append(gam[:, 0] * a["lam0"][k] * dur + gam[:, 1] * comp1)
        return out
    mu, alpha, beta = _hawkes_arrays(p, net)
    for k in range(net.n_pairs):
        out.append(_kernels.hawkes_interval_compensators(mu[k], alpha[k], beta, net.pair_times(k), float(T)))
    return out


def pair_rescaled_times(p, data, T: float) -> dict[tuple[int, int], np.ndarray]:
    """Fitted compensator between consecutive events of each pair (1-based keys)."""
    net = as_network(data, p.n_nodes)
    pieces = _pair_pieces(p, net, T)
    return {(int(net.src[k]) + 1, int(net.dst[k]) + 1): pieces[k][:-1] for k in range(net.n_pairs)}


def ks_matrix(p, data, T: float) -> KsMatrix:
    net = as_network(data, p.n_nodes)
    n = p.n_nodes
    stat = np.full((n, n), np.nan)
    sizes = np.zeros((n, n), dtype=np.int64)
    for (i, j), r in pair_rescaled_times(p, net, T).items():
        sizes[i - 1, j - 1] = len(r)
        stat[i - 1, j - 1] = ks_statistic(r)
    return KsMatrix(stat, sizes)


# ---------------------------------------------------------------- residuals


@dataclass
class ResidualMatrix:
    """Pearson residuals (M - Lambda) / sqrt(Lambda); NaN where Lambda = 0 or i = j."""

    values: np.ndarray
    counts: np.ndarray
    compensator: np.ndarray

    def off_diagonal(self) -> np.ndarray:
        mask = ~np.eye(len(self.values), dtype=bool)
        v = self.values[mask]
        return v[np.isfinite(v)]


def compensator_matrix(p, data, T: float) -> np.ndarray:
    """Fitted compensator of each pair over (0, T]; zero on the diagonal."""
    net = as_network(data, p.n_nodes)
    out = np.zeros((p.n_nodes, p.n_nodes))
    out[net.src, net.dst] = [float(np.sum(c)) for c in _pair_pieces(p, net, T)]
    return out


def pearson_residual(count, comp):
    count = np.asarray(count, dtype=float)
    comp = np.asarray(comp, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(comp > 0, (count - comp) / np.sqrt(comp), np.nan)


def pearson_residuals(p, data, T: float) -> ResidualMatrix:
    net = as_network(data, p.n_nodes)
    comp = compensator_matrix(p, net, T)
    counts = net.count_matrix().astype(float)
    vals = pearson_residual(counts, comp)
    np.fill_diagonal(vals, np.nan)
    return ResidualMatrix(vals, counts, comp)


def fit_poisson(data, T: float, *, n_nodes: int | None = None, pooled: bool = False) -> PoissonParams:
    """Maximum-likelihood homogeneous Poisson rates, per pair or one shared rate."""
    net = as_network(data, n_nodes)
    n = net.n_nodes
    W = net.count_matrix().astype(float)
    if pooled:
        rates = np.full((n, n), W.sum() / (n * (n - 1) * T))
    else:
        rates = W / T
    np.fill_diagonal(rates, 0.0)
    return PoissonParams(rates)


# ---------------------------------------------------------------- prediction


class ExplosiveDrawError(RuntimeError):
    """Too many simulated continuations of a pair blew past the event cap."""


@dataclass
class PredictionRun:
    """Simulated continuations from the split time to each horizon.

    ``counts[s, h]`` holds the new events of simulation ``s`` over
    (t_split, horizon_times[h]]; ``intensity[s, h]`` the pair intensities
    just before that horizon. Continuations store (time, winner, loser)
    rows of every new event up to the last horizon. ``censored[s, i, j]``
    marks a pair whose simulation stopped at the event cap; its counts are
    lower bounds.
    """

    split_day: int
    split_time: float
    horizon_days: np.ndarray
    horizon_times: np.ndarray
    counts: np.ndarray
    intensity: np.ndarray
    continuations: list = field(repr=False, default_factory=list)
    censored: np.ndarray | None = field(repr=False, default=None)

    @property
    def n_sims(self) -> int:
        return self.counts.shape[0]

    def _h(self, day: int) -> int:
        idx = np.flatnonzero(self.horizon_days == day)
        if len(idx) == 0:
            raise KeyError(f"horizon day {day} not in run ({self.horizon_days.tolist()})")
        return int(idx[0])

    def mean_counts(self, day: int) -> np.ndarray:
        return self.counts[:, self._h(day)].mean(axis=0)

    def median_counts(self, day: int) -> np.ndarray:
        return np.median(self.counts[:, self._h(day)], axis=0)

    def count_se(self, day: int) -> np.ndarray:
        c = self.counts[:, self._h(day)]
        return c.std(axis=0, ddof=1) / math.sqrt(len(c)) if len(c) > 1 else np.zeros(c.shape[1:])

    def outdegree(self, day: int) -> np.ndarray:
        """Mean over simulations of each node's summed out-going intensity."""
        return self.intensity[:, self._h(day)].sum(axis=2).mean(axis=0)


def _pair_sim_arrays(p, net: Network, t_split: float, rng: np.random.Generator):
    """Kernel inputs for one parameter set, conditioned on history up to ``t_split``."""
    P = net.n_pairs
    last = [net.pair_times(k) for k in range(P)]
    if isinstance(p, (CmmhpParams, ImmhpParams)):
        a = mmhp_arrays(p, net)
        filt = _kernels.mmhp_network_filter(a["lam0"], a["lam1"], a["alpha"], a["beta"], a["q1"], a["q0"],
                                            a["p_active"], net.times, net.offsets, float(t_split))
        filt = np.nan_to_num(filt, nan=0.5)
        z0 = (rng.uniform(size=P) < filt).astype(np.int64)
        lam0, lam1, alpha, beta = a["lam0"], a["lam1"], a["alpha"], a["beta"]
        q1, q0 = a["q1"], a["q0"]
    else:
        mu, alpha, b = _hawkes_arrays(p, net)
        lam0 = np.zeros(P)
        lam1 = mu
        beta = np.full(P, float(b))
        q1 = np.zeros(P)
        q0 = np.ones(P)
        z0 = np.ones(P, dtype=np.int64)
    S0 = np.array([alpha[k] * np.sum(np.exp(-beta[k] * (t_split - last[k]))) for k in range(P)])
    f = np.ascontiguousarray
    return (f(lam0, dtype=float), f(lam1, dtype=float), f(alpha, dtype=float), f(beta, dtype=float),
            f(q1, dtype=float), f(q0, dtype=float), z0, S0)


def _as_param_list(draws) -> list:
    if isinstance(draws, (ChpParams, DchpParams, CmmhpParams, ImmhpParams, PoissonParams)):
        return [draws]
    if hasattr(draws, "params") and hasattr(draws, "__len__") and not isinstance(draws, list):
        return [draws.params(k) for k in range(len(draws))]
    return list(draws)


def posterior_predict(draws, ds: EventDataset, split_day: int, horizon_days, n_sims: int = 1000,
                      seed=0, keep_events: bool = False, max_pair_events: int = 50_000) -> PredictionRun:
    """Simulate ``n_sims`` continuations of the observed history past ``split_day``.

    Simulation ``s`` uses parameter draw ``s mod n_draws``. Each pair starts
    with the excitation of its true history up to the split; MMHP pairs draw
    their initial state from the filtered probability at the split.

    Supercritical draws can explode; a pair stops at ``max_pair_events`` and
    its counts are censored there. Medians stay exact while fewer than half of
    a pair's simulations are censored, so that case only warns; beyond it
    :class:`ExplosiveDrawError` is raised.
    """
    horizons = np.atleast_1d(np.asarray(horizon_days, dtype=np.int64))
    if np.any(horizons <= split_day) or np.any(horizons > ds.n_days) or split_day < 0:
        raise ValueError(f"need 0 <= split ({split_day}) < horizon <= {ds.n_days}; got {horizons.tolist()}")
    horizons = np.sort(horizons)
    params = _as_param_list(draws)
    if not params:
        raise ValueError("no posterior draws")
    n = params[0].n_nodes
    t_split = ds.day_end(split_day)
    ends = np.array([ds.day_end(int(d)) for d in horizons], dtype=float)
    net = as_network(ds, n).truncate(t_split)
    seeds = np.random.SeedSequence(seed).spawn(n_sims)
    H, P = len(horizons), net.n_pairs
    counts = np.zeros((n_sims, H, n, n), dtype=np.int64)
    inten = np.zeros((n_sims, H, n, n))
    conts = []
    cens = np.zeros((n_sims, n, n), dtype=bool)
    cache = {}
    for s in range(n_sims):
        k = s % len(params)
        rng = np.random.default_rng(seeds[s])
        if k not in cache or isinstance(params[k], (CmmhpParams, ImmhpParams)):
            cache[k] = _pair_sim_arrays(params[k], net, t_split, rng)
        kseed = int(rng.integers(2**31 - 1))
        c, lam, et, ep, cp = _kernels.simulate_mmhp_network(*cache[k], float(t_split), ends, kseed,
                                                            max_pair_events)
        cens[s][net.src, net.dst] = cp
        counts[s][:, net.src, net.dst] = c
        inten[s][:, net.src, net.dst] = lam
        if keep_events:
            order = np.argsort(et, kind="stable")
            conts.append(np.column_stack([et[order], net.src[ep[order]] + 1, net.dst[ep[order]] + 1]))
    frac = cens.mean(axis=0)
    if frac.max() >= 0.5:
        i, j = np.unravel_index(int(np.argmax(frac)), frac.shape)
        raise ExplosiveDrawError(f"pair ({i + 1}, {j + 1}) hit the {max_pair_events}-event cap in "
                                 f"{frac.max():.0%} of simulations")
    if frac.max() > 0:
        log.warning("%d of %d simulations censored at the event cap in at least one pair; mean counts are "
                    "lower bounds", int(cens.any(axis=(1, 2)).sum()), n_sims)
    return PredictionRun(int(split_day), float(t_split), horizons, ends, counts, inten, conts, cens)


def observed_counts(ds: EventDataset, split_day: int, horizon_day: int) -> np.ndarray:
    """True new wins A^{(d)} over (t_split, t_horizon]."""
    t0, t1 = ds.day_end(split_day), ds.day_end(horizon_day)
    A = np.zeros((ds.n_nodes, ds.n_nodes), dtype=np.int64)
    for e in ds.events:
        if t0 < e.time <= t1:
            A[e.winner - 1, e.loser - 1] += 1
    return A


def poisson_forecast(ds: EventDataset, split_day: int, horizon_days, *, median: bool = False) -> dict[int, np.ndarray]:
    """Per-pair homogeneous Poisson forecast fitted on the data up to the split."""
    t_split = ds.day_end(split_day)
    rates = fit_poisson(as_network(ds).truncate(t_split), t_split).rates
    out = {}
    for d in np.atleast_1d(horizon_days):
        mu = rates * (ds.day_end(int(d)) - t_split)
        out[int(d)] = poisson.median(mu) if median else mu
    return out


def prediction_mae(A_hat, A_true) -> float:
    """Mean absolute error over the off-diagonal entries."""
    A_hat = np.asarray(A_hat, dtype=float)
    A_true = np.asarray(A_true, dtype=float)
    if A_hat.shape != A_true.shape or A_hat.ndim != 2 or A_hat.shape[0] != A_hat.shape[1]:
        raise ValueError(f"shape mismatch {A_hat.shape} vs {A_true.shape}")
    mask = ~np.eye(len(A_hat), dtype=bool)
    return float(np.mean(np.abs(A_hat - A_true)[mask]))


def poisson_median_mae(mu) -> float:
    """E|A - median(A)| for A ~ Poisson(mu), averaged over off-diagonal entries."""
    mu = np.asarray(mu, dtype=float)
    vals = []
    for (i, j), m in np.ndenumerate(mu):
        if i == j:
            continue
        med = poisson.median(m) if m > 0 else 0.0
        hi = int(poisson.ppf(1 - 1e-15, m)) + 2 if m > 0 else 1
        k = np.arange(hi)
        vals.append(float(np.sum(np.abs(k - med) * poisson.pmf(k, m))) if m > 0 else 0.0)
    return float(np.mean(vals))


# ---------------------------------------------------------------- out-degree ranks


def outdegree_rank(params_or_draws, data, t: float, *, n_nodes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Out-degree intensity of each node at ``t`` and the ordering it implies.

    With several draws the intensity matrix is averaged first. The order lists
    1-based node ids by descending score, ties to the smaller id.
    """
    params = _as_param_list(params_or_draws)
    n = n_nodes or params[0].n_nodes
    net = as_network(data, n)
    M = np.mean([pair_intensities(p, net, t) for p in params], axis=0)
    score = M.sum(axis=1)
    order = np.lexsort((np.arange(n), -score)) + 1
    return score, order


# ---------------------------------------------------------------- Glicko bands


@dataclass
class GlickoBands:
    """Mean and sd of forecast ratings, indexed by cumulative event count."""

    event_index: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    split_index: int

    def rows(self):
        for k, e in enumerate(self.event_index):
            for i in range(self.mean.shape[1]):
                yield i + 1, int(e), float(self.mean[k, i]), float(self.sd[k, i])


def glicko_forecast(draws, ds: EventDataset, split_day: int, horizon_day: int,
                    config: GlickoConfig | None = None, seed=0, n_sims: int = 1000,
                    run: PredictionRun | None = None) -> GlickoBands:
    """Glicko ratings over the observed history up to the split, continued
    along each simulated future; a simulation that ends early carries its
    last ratings forward.
    """
    cfg = config or GlickoConfig()
    if run is None or not run.continuations:
        run = posterior_predict(draws, ds, split_day, [horizon_day], n_sims, seed, keep_events=True)
    n = ds.n_nodes
    t_split, t_end = run.split_time, ds.day_end(horizon_day)
    past = [e for e in ds.events if e.time <= t_split]
    w = np.array([e.winner for e in past], dtype=np.int64)
    l = np.array([e.loser for e in past], dtype=np.int64)
    d = np.array([e.day for e in past], dtype=np.int64)
    R0, RD0 = glicko_path(w, l, d, n, cfg)
    start = (R0[-1], RD0[-1], int(d[-1]) if len(d) else 1)
    bounds = np.asarray(ds.day_boundaries)
    paths = []
    for ev in run.continuations:
        ev = ev[ev[:, 0] <= t_end]
        days = np.searchsorted(bounds, ev[:, 0], side="left") + 1
        R, _ = glicko_path(ev[:, 1].astype(np.int64), ev[:, 2].astype(np.int64), days, n, cfg, init=start)
        paths.append(R)
    K = max(len(R) for R in paths)
    stack = np.stack([np.vstack([R, np.repeat(R[-1:], K - len(R), axis=0)]) for R in paths])
    idx = len(past) + np.arange(K)
    return GlickoBands(idx, stack.mean(axis=0), stack.std(axis=0), len(past))
