"""Compiled inner loops for exponential-kernel Hawkes and MMHP pair likelihoods.

Pair histories are passed packed: one flat ``times`` array plus ``offsets`` so
that pair ``p`` owns ``times[offsets[p]:offsets[p+1]]``. States are indexed by
their value: 0 inactive, 1 active.
"""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _log(x):
    if x > 0.0:
        return math.log(x)
    return NEG_INF


@njit(cache=True)
def _lse2(a, b):
    if a == NEG_INF and b == NEG_INF:
        return NEG_INF
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


@njit(cache=True)
def hawkes_pair_loglik_grad(mu, alpha, beta, times, T):
    """Log-likelihood on (0, T] and its partials in (mu, alpha, beta)."""
    ll = 0.0
    dmu = 0.0
    dal = 0.0
    dbe = 0.0
    A = 0.0
    B = 0.0
    n = times.shape[0]
    for k in range(n):
        if k > 0:
            d = times[k] - times[k - 1]
            e = math.exp(-beta * d)
            B = e * (B + d * (A + 1.0))
            A = e * (A + 1.0)
        lam = mu + alpha * A
        if lam <= 0.0:
            return NEG_INF, 0.0, 0.0, 0.0
        ll += math.log(lam)
        dmu += 1.0 / lam
        dal += A / lam
        dbe -= alpha * B / lam
    C = 0.0
    D = 0.0
    for k in range(n):
        r = T - times[k]
        e = math.exp(-beta * r)
        C += 1.0 - e
        D += r * e
    ll -= mu * T + alpha / beta * C
    dmu -= T
    dal -= C / beta
    dbe -= -alpha / (beta * beta) * C + alpha / beta * D
    return ll, dmu, dal, dbe


@njit(cache=True)
def hawkes_network_loglik_grad(mu, alpha, beta, times, offsets, T):
    P = mu.shape[0]
    dmu = np.zeros(P)
    dal = np.zeros(P)
    dbe = np.zeros(P)
    total = 0.0
    for p in range(P):
        ll, a, b, c = hawkes_pair_loglik_grad(
            mu[p], alpha[p], beta, times[offsets[p]:offsets[p + 1]], T)
        if ll == NEG_INF:
            return NEG_INF, dmu, dal, dbe
        total += ll
        dmu[p] = a
        dal[p] = b
        dbe[p] = c
    return total, dmu, dal, dbe


@njit(cache=True)
def hawkes_interval_compensators(mu, alpha, beta, times, T):
    """Compensator over each interval (t_{m-1}, t_m], m = 1..M+1 (t_0 = 0, t_{M+1} = T)."""
    n = times.shape[0]
    out = np.empty(n + 1)
    S = 0.0
    prev = 0.0
    for m in range(n + 1):
        b = times[m] if m < n else T
        d = b - prev
        e = math.exp(-beta * d)
        out[m] = mu * d + S / beta * (1.0 - e)
        S = S * e
        if m < n:
            S += alpha
        prev = b
    return out


@njit(cache=True)
def mmhp_emissions(lam0, lam1, alpha, beta, times, T):
    """Per-interval log emission for each held state, and interval lengths.

    Interval m covers (t_{m-1}, t_m]; the first M end in an event, the last
    ends at T with no event. The excitation carried into each interval sums
    over every earlier event regardless of the state it occurred in.
    """
    n = times.shape[0]
    em = np.empty((n + 1, 2))
    dur = np.empty(n + 1)
    S = 0.0
    prev = 0.0
    loglam0 = _log(lam0)
    for m in range(n + 1):
        b = times[m] if m < n else T
        d = b - prev
        dur[m] = d
        e = math.exp(-beta * d)
        comp1 = lam1 * d + S / beta * (1.0 - e)
        em[m, 0] = -lam0 * d
        em[m, 1] = -comp1
        S = S * e
        if m < n:
            em[m, 0] += loglam0
            em[m, 1] += _log(lam1 + S)
            S += alpha
        prev = b
    return em, dur


@njit(cache=True)
def ctmc_log_transition(q1, q0, dt):
    """log P[z, z'] over dt, indexed by state value (0 inactive, 1 active)."""
    s = q0 + q1
    e = math.exp(-s * dt)
    P = np.empty((2, 2))
    P[1, 1] = _log(q0 / s + q1 / s * e)
    P[1, 0] = _log(q1 / s * (1.0 - e))
    P[0, 0] = _log(q1 / s + q0 / s * e)
    P[0, 1] = _log(q0 / s * (1.0 - e))
    return P


@njit(cache=True)
def mmhp_forward(lam0, lam1, alpha, beta, q1, q0, p_active, times, T):
    """Marginal log-likelihood and final log forward vector."""
    em, dur = mmhp_emissions(lam0, lam1, alpha, beta, times, T)
    la = np.empty(2)
    la[0] = _log(1.0 - p_active)
    la[1] = _log(p_active)
    new = np.empty(2)
    for m in range(em.shape[0]):
        P = ctmc_log_transition(q1, q0, dur[m])
        for s in range(2):
            new[s] = _lse2(la[0] + P[0, s], la[1] + P[1, s]) + em[m, s]
        la[0] = new[0]
        la[1] = new[1]
    return _lse2(la[0], la[1]), la


@njit(cache=True)
def mmhp_network_loglik(lam0, lam1, alpha, beta, q1, q0, p_active, times, offsets, T):
    total = 0.0
    for p in range(lam0.shape[0]):
        ll, _ = mmhp_forward(lam0[p], lam1[p], alpha[p], beta[p], q1[p], q0[p], p_active[p],
                             times[offsets[p]:offsets[p + 1]], T)
        total += ll
        if total == NEG_INF:
            return NEG_INF
    return total


@njit(cache=True)
def mmhp_network_filter(lam0, lam1, alpha, beta, q1, q0, p_active, times, offsets, T):
    """P(active at T | history) for every pair."""
    P = lam0.shape[0]
    out = np.empty(P)
    for p in range(P):
        ll, la = mmhp_forward(lam0[p], lam1[p], alpha[p], beta[p], q1[p], q0[p], p_active[p],
                              times[offsets[p]:offsets[p + 1]], T)
        if ll == NEG_INF:
            out[p] = np.nan
        else:
            out[p] = math.exp(la[1] - ll)
    return out


@njit(cache=True)
def mmhp_forward_backward(lam0, lam1, alpha, beta, q1, q0, p_active, times, T):
    """Smoothed per-interval state probabilities (M+1, 2) and the log-likelihood."""
    em, dur = mmhp_emissions(lam0, lam1, alpha, beta, times, T)
    K = em.shape[0]
    fa = np.empty((K, 2))
    logP = np.empty((K, 2, 2))
    prev0 = _log(1.0 - p_active)
    prev1 = _log(p_active)
    for m in range(K):
        logP[m] = ctmc_log_transition(q1, q0, dur[m])
        for s in range(2):
            fa[m, s] = _lse2(prev0 + logP[m, 0, s], prev1 + logP[m, 1, s]) + em[m, s]
        prev0 = fa[m, 0]
        prev1 = fa[m, 1]
    ll = _lse2(fa[K - 1, 0], fa[K - 1, 1])
    bb = np.zeros((K, 2))
    for m in range(K - 2, -1, -1):
        for s in range(2):
            bb[m, s] = _lse2(logP[m + 1, s, 0] + em[m + 1, 0] + bb[m + 1, 0],
                             logP[m + 1, s, 1] + em[m + 1, 1] + bb[m + 1, 1])
    gam = np.empty((K, 2))
    for m in range(K):
        a0 = fa[m, 0] + bb[m, 0] - ll
        a1 = fa[m, 1] + bb[m, 1] - ll
        z = _lse2(a0, a1)
        gam[m, 0] = math.exp(a0 - z)
        gam[m, 1] = math.exp(a1 - z)
    return gam, ll


@njit(cache=True)
def mmhp_viterbi(lam0, lam1, alpha, beta, q1, q0, p_active, times, T):
    """Most probable per-interval state path and its joint log-probability.

    The path covers the intervals (0, t1], ..., (tM, T]. Ties between states resolve to active.
    """
    em, dur = mmhp_emissions(lam0, lam1, alpha, beta, times, T)
    K = em.shape[0]
    delta = np.empty((K, 2))
    back = np.zeros((K, 2), dtype=np.int64)
    prev0 = _log(1.0 - p_active)
    prev1 = _log(p_active)
    for m in range(K):
        P = ctmc_log_transition(q1, q0, dur[m])
        for s in range(2):
            c0 = prev0 + P[0, s]
            c1 = prev1 + P[1, s]
            if m == 0:
                # the state at time 0 is not part of the path: sum it out
                delta[0, s] = _lse2(c0, c1) + em[0, s]
            elif c1 >= c0:
                delta[m, s] = c1 + em[m, s]
                back[m, s] = 1
            else:
                delta[m, s] = c0 + em[m, s]
                back[m, s] = 0
        prev0 = delta[m, 0]
        prev1 = delta[m, 1]
    path = np.empty(K, dtype=np.int64)
    path[K - 1] = 1 if delta[K - 1, 1] >= delta[K - 1, 0] else 0
    best = delta[K - 1, path[K - 1]]
    for m in range(K - 1, 0, -1):
        path[m - 1] = back[m, path[m]]
    return path, best


@njit(cache=True)
def simulate_mmhp_network(lam0, lam1, alpha, beta, q1, q0, z0, S0, start, ends, seed, max_pair_events):
    """Continue every pair's MMHP from ``start`` through each time in ``ends``.

    ``S0`` is the excitation carried in at ``start``; a zero ``q1`` pins a pair
    in the active state, which turns it into a plain Hawkes process. Returns
    per-pair counts and left-limit intensities at each end, the new events as
    (time, pair) arrays in time order within each pair, and a per-pair flag.
    A pair that reaches ``max_pair_events`` stops there: its remaining counts
    are censored at the cap and the flag is set.
    """
    np.random.seed(seed)
    P = lam0.shape[0]
    H = ends.shape[0]
    counts = np.zeros((H, P), dtype=np.int64)
    inten = np.zeros((H, P))
    censored = np.zeros(P, dtype=np.bool_)
    ev_t = []
    ev_p = []
    for p in range(P):
        z = z0[p]
        S = S0[p]
        t = start
        h = 0
        n_ev = 0
        while h < H:
            rate_out = q1[p] if z == 1 else q0[p]
            t_switch = t + np.random.exponential(1.0 / rate_out) if rate_out > 0.0 else np.inf
            seg_end = min(t_switch, ends[H - 1])
            while True:
                bound = lam0[p] if z == 0 else lam1[p] + S
                if bound > 0.0:
                    w = np.random.exponential(1.0 / bound)
                else:
                    w = np.inf
                # record horizons passed before the next candidate
                while h < H and ends[h] <= seg_end and t + w > ends[h]:
                    counts[h, p] = n_ev
                    Sh = S * math.exp(-beta[p] * (ends[h] - t))
                    inten[h, p] = lam0[p] if z == 0 else lam1[p] + Sh
                    h += 1
                if t + w > seg_end:
                    S *= math.exp(-beta[p] * (seg_end - t))
                    t = seg_end
                    break
                t += w
                S *= math.exp(-beta[p] * w)
                if z == 0 or np.random.random() * bound <= lam1[p] + S:
                    ev_t.append(t)
                    ev_p.append(p)
                    n_ev += 1
                    S += alpha[p]
                    if n_ev >= max_pair_events:
                        break
            if n_ev >= max_pair_events:
                censored[p] = True
                while h < H:
                    counts[h, p] = n_ev
                    inten[h, p] = lam0[p] if z == 0 else lam1[p] + S
                    h += 1
                break
            z = 1 - z
    return counts, inten, np.array(ev_t), np.array(ev_p, dtype=np.int64), censored
