"""Classical ranking baselines: I&SI reordering, Glicko ratings and a
rank-difference Poisson regression on aggregate counts.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize
from scipy.stats import rankdata

from .data_io import EventDataset, WinLossMatrix

log = logging.getLogger(__name__)

EXHAUSTIVE_MAX_N = 8


def _counts(W) -> np.ndarray:
    M = W.counts if isinstance(W, WinLossMatrix) else W
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"win/loss matrix must be square, got shape {M.shape}")
    return M


# ---------------------------------------------------------------- I&SI


@dataclass(frozen=True)
class Ordering:
    """Node ids (1-based) from most to least dominant, with the achieved (I, SI)."""

    order: tuple[int, ...]
    inconsistencies: int
    strength: int

    @property
    def positions(self) -> dict[int, int]:
        return {node: k + 1 for k, node in enumerate(self.order)}


def _check_order(order, n: int) -> np.ndarray:
    o = np.asarray(order, dtype=np.int64)
    if o.shape != (n,) or sorted(o.tolist()) != list(range(1, n + 1)):
        raise ValueError(f"order must be a permutation of 1..{n}, got {list(order)}")
    return o - 1


def count_inconsistencies(W, order) -> tuple[int, int]:
    """(I, SI) of ``W`` reordered so that ``order[0]`` comes first.

    A pair is inconsistent when the lower-placed node beat the higher-placed
    one strictly more often; SI weights each by the positional gap.
    """
    M = _counts(W)
    o = _check_order(order, M.shape[0])
    R = M[np.ix_(o, o)]
    lower = np.tril(R > R.T, k=-1)
    i, j = np.nonzero(lower)
    return int(len(i)), int(np.sum(i - j))


@njit(cache=True)
def _energy(D, perm):
    n = perm.shape[0]
    I = 0
    SI = 0
    for a in range(n):
        for b in range(a):
            if D[perm[a], perm[b]]:
                I += 1
                SI += a - b
    return I, SI


@njit(cache=True)
def _anneal(D, perm, steps, t0, t1, seed, big):
    np.random.seed(seed)
    n = perm.shape[0]
    # Search on a softened energy; keep the lexicographic best seen.
    soft = float(n)
    I, SI = _energy(D, perm)
    cur = I * soft + SI
    best = I * big + SI
    best_perm = perm.copy()
    ratio = (t1 / t0) ** (1.0 / max(steps - 1, 1))
    temp = t0
    for _ in range(steps):
        a = np.random.randint(n)
        if np.random.random() < 0.5:
            b = a + 1 if a + 1 < n else a - 1
        else:
            b = np.random.randint(n - 1)
            if b >= a:
                b += 1
        perm[a], perm[b] = perm[b], perm[a]
        I, SI = _energy(D, perm)
        new = I * soft + SI
        if new <= cur or np.random.random() < math.exp(-(new - cur) / temp):
            cur = new
            if I * big + SI < best:
                best = I * big + SI
                best_perm[:] = perm
        else:
            perm[a], perm[b] = perm[b], perm[a]
        temp *= ratio
    return best_perm, best


@dataclass
class IsiConfig:
    seed: int = 0
    steps: int = 20000
    restarts: int = 8
    method: str = "auto"
    t_start: float = 2.0
    t_end: float = 0.01


def _tie_key(M: np.ndarray) -> np.ndarray:
    """Position of each node when sorted by total wins (desc) then id."""
    wins = M.sum(axis=1) - np.diag(M)
    idx = np.lexsort((np.arange(len(wins)), -wins))
    key = np.empty(len(wins), dtype=np.int64)
    key[idx] = np.arange(len(wins))
    return key


def _canonicalize(D: np.ndarray, perm: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Adjacent swaps that keep (I, SI) and move toward the tie-break order."""
    perm = perm.copy()
    target = _energy(D, perm)
    changed = True
    while changed:
        changed = False
        for k in range(len(perm) - 1):
            if key[perm[k]] > key[perm[k + 1]]:
                perm[k], perm[k + 1] = perm[k + 1], perm[k]
                if _energy(D, perm) == target:
                    changed = True
                else:
                    perm[k], perm[k + 1] = perm[k + 1], perm[k]
    return perm


def _exhaustive(D: np.ndarray, key: np.ndarray) -> np.ndarray:
    n = len(key)
    base = np.argsort(key)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    perms = base[perms]  # lexicographic in tie-break order
    pos = np.empty_like(perms)
    rows = np.arange(len(perms))[:, None]
    pos[rows, perms] = np.arange(n)
    I = np.zeros(len(perms), dtype=np.int64)
    SI = np.zeros(len(perms), dtype=np.int64)
    for u, v in zip(*np.nonzero(D)):
        gap = pos[:, u] - pos[:, v]
        I += gap > 0
        SI += np.maximum(gap, 0)
    best = np.flatnonzero(I == I.min())
    best = best[SI[best] == SI[best].min()]
    return perms[best[0]]


def isi_rank(W, config: IsiConfig | None = None) -> Ordering:
    """Ordering minimizing (I, SI) lexicographically.

    Exhaustive search for N <= 8 under ``method="auto"``; otherwise simulated
    annealing over adjacent and random pair swaps, best of several seeded
    restarts. Ties between equally good orderings go to more total wins, then
    smaller node id.
    """
    cfg = config or IsiConfig()
    M = _counts(W)
    n = M.shape[0]
    if n < 2:
        raise ValueError("need at least two nodes")
    D = (M > M.T) & ~np.eye(n, dtype=bool)
    key = _tie_key(M)
    method = cfg.method
    if method == "auto":
        method = "exhaustive" if n <= EXHAUSTIVE_MAX_N else "anneal"
    if method == "exhaustive":
        perm = _exhaustive(D, key)
    elif method == "anneal":
        big = n * n * n + 1
        seeds = np.random.SeedSequence(cfg.seed).generate_state(max(1, cfg.restarts))
        perm, best = None, None
        start = np.argsort(key).astype(np.int64)
        for k, s in enumerate(seeds):
            init = start.copy() if k == 0 else np.random.default_rng(int(s)).permutation(start)
            p, e = _anneal(D, init, cfg.steps, cfg.t_start, cfg.t_end, int(s) % (2**31), big)
            if best is None or e < best:
                perm, best = p, e
    else:
        raise ValueError(f"unknown method {cfg.method!r}")
    perm = _canonicalize(D, perm, key)
    I, SI = _energy(D, perm)
    return Ordering(tuple(int(v) + 1 for v in perm), int(I), int(SI))


# ---------------------------------------------------------------- Glicko

GLICKO_Q = math.log(10.0) / 400.0


@dataclass
class GlickoConfig:
    r0: float = 1500.0
    rd0: float = 350.0
    c: float = 63.2
    period: str = "day"  # "day" or "none"


@dataclass
class GlickoTrajectory:
    """Per node, a list of (event index, rating, deviation); index 0 is the prior."""

    n_nodes: int
    history: dict[int, list[tuple[int, float, float]]] = field(default_factory=dict)

    def final(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.array([self.history[i][-1][1] for i in range(1, self.n_nodes + 1)])
        rd = np.array([self.history[i][-1][2] for i in range(1, self.n_nodes + 1)])
        return r, rd

    def at(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Ratings and deviations after the first ``k`` events."""
        r = np.empty(self.n_nodes)
        rd = np.empty(self.n_nodes)
        for i in range(1, self.n_nodes + 1):
            h = self.history[i]
            idx = [e for e, _, _ in h]
            j = int(np.searchsorted(idx, k, side="right")) - 1
            r[i - 1], rd[i - 1] = h[j][1], h[j][2]
        return r, rd

    def rows(self):
        for i in range(1, self.n_nodes + 1):
            for e, r, rd in self.history[i]:
                yield i, e, r, rd


def _glicko_g(rd: float) -> float:
    return 1.0 / math.sqrt(1.0 + 3.0 * GLICKO_Q**2 * rd**2 / math.pi**2)


def glicko_update(r: float, rd: float, r_opp: float, rd_opp: float, score: float) -> tuple[float, float]:
    """One-game Glicko update of (r, rd) against an opponent."""
    g = _glicko_g(rd_opp)
    E = 1.0 / (1.0 + 10.0 ** (-g * (r - r_opp) / 400.0))
    d2 = 1.0 / (GLICKO_Q**2 * g**2 * E * (1.0 - E))
    denom = 1.0 / rd**2 + 1.0 / d2
    return r + GLICKO_Q / denom * g * (score - E), math.sqrt(1.0 / denom)


def glicko_path(winners, losers, days, n_nodes: int, config: GlickoConfig | None = None,
                init: tuple[np.ndarray, np.ndarray, int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Ratings and deviations of every node after each event, shape (K+1, N).

    Row 0 is the state before the first event (``init`` = (r, rd, day) if
    given). Node ids are 1-based. With ``period="day"`` every deviation
    regrows by ``c`` per elapsed day, capped at ``rd0``.
    """
    cfg = config or GlickoConfig()
    if init is None:
        r = np.full(n_nodes, cfg.r0)
        rd = np.full(n_nodes, cfg.rd0)
        day = int(days[0]) if len(days) else 1
    else:
        r, rd, day = np.array(init[0], dtype=float), np.array(init[1], dtype=float), int(init[2])
    K = len(winners)
    R = np.empty((K + 1, n_nodes))
    RD = np.empty((K + 1, n_nodes))
    R[0], RD[0] = r, rd
    for k in range(K):
        if cfg.period == "day" and days[k] > day:
            rd = np.minimum(np.sqrt(rd**2 + (days[k] - day) * cfg.c**2), cfg.rd0)
            day = int(days[k])
        w, l = int(winners[k]) - 1, int(losers[k]) - 1
        rw, rdw = glicko_update(r[w], rd[w], r[l], rd[l], 1.0)
        rl, rdl = glicko_update(r[l], rd[l], r[w], rd[w], 0.0)
        r[w], rd[w], r[l], rd[l] = rw, rdw, rl, rdl
        R[k + 1], RD[k + 1] = r, rd
    return R, RD


def glicko_scores(ds: EventDataset, config: GlickoConfig | None = None) -> GlickoTrajectory:
    """Sequential Glicko ratings, one event at a time in time order."""
    cfg = config or GlickoConfig()
    w = np.array([e.winner for e in ds.events], dtype=np.int64)
    l = np.array([e.loser for e in ds.events], dtype=np.int64)
    d = np.array([e.day for e in ds.events], dtype=np.int64)
    R, RD = glicko_path(w, l, d, ds.n_nodes, cfg)
    traj = GlickoTrajectory(ds.n_nodes, {i: [(0, cfg.r0, cfg.rd0)] for i in range(1, ds.n_nodes + 1)})
    for k in range(len(w)):
        for node in (w[k], l[k]):
            traj.history[int(node)].append((k + 1, float(R[k + 1, node - 1]), float(RD[k + 1, node - 1])))
    return traj


# ---------------------------------------------------------------- aggregate ranking


@dataclass(frozen=True)
class AggregateRankFit:
    f: np.ndarray
    intercept: float
    slope: float


def aggregate_rank_fit(W, T: float, *, seed: int = 0) -> AggregateRankFit:
    """MAP fit of ``N_ij ~ Poisson(T exp(a + b (f_i - f_j)))``.

    Priors: uniform on f in [0, 1], half-normal(0, 1) on b >= 0, flat on a.
    """
    M = _counts(W)
    n = M.shape[0]
    if n < 2:
        raise ValueError("need at least two nodes")
    off = ~np.eye(n, dtype=bool)
    if not np.any(M[off] > 0):
        log.warning("win/loss matrix is all zero; ranks are undetermined")
        return AggregateRankFit(np.full(n, 0.5), -math.inf, 0.0)
    N = np.where(off, M, 0.0)

    def fun(x):
        a, b, f = x[0], x[1], x[2:]
        diff = f[:, None] - f[None, :]
        mu = np.where(off, T * np.exp(a + b * diff), 0.0)
        ll = np.sum(N * (a + b * diff)) - mu.sum() - 0.5 * b * b
        r = N - mu
        ga = r.sum()
        gb = np.sum(r * diff) - b
        gf = b * (r.sum(axis=1) - r.sum(axis=0))
        return -ll, -np.concatenate([[ga, gb], gf])

    wins, losses = N.sum(1), N.sum(0)
    tot = wins + losses
    frac = np.where(tot > 0, wins / np.maximum(tot, 1), 0.5)
    f0 = 0.5 + 0.4 * (frac - frac.mean()) / max(np.ptp(frac), 1e-12) if np.ptp(frac) > 0 else np.full(n, 0.5)
    a0 = math.log(N.sum() / (n * (n - 1) * T))
    x0 = np.concatenate([[a0, 1.0], f0])
    bounds = [(None, None), (0.0, None)] + [(0.0, 1.0)] * n
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": 2000, "ftol": 1e-14, "gtol": 1e-9})
    if not res.success:
        log.warning("aggregate rank fit did not converge: %s", res.message)
    return AggregateRankFit(np.asarray(res.x[2:]), float(res.x[0]), float(res.x[1]))


# ---------------------------------------------------------------- Spearman


def spearman(x, y) -> float:
    """Pearson correlation of average-tie ranks; NaN when a ranking is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("spearman needs two vectors of equal length >= 2")
    rx = rankdata(x) - (len(x) + 1) / 2
    ry = rankdata(y) - (len(y) + 1) / 2
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0:
        return math.nan
    return float(rx @ ry) / den
