"""Latent-rank network point-process models.

Three cohort models share latent ranks ``f`` in [0, 1] and an excitation
function of the two ranks:

* ``chp``   -- Hawkes per directed pair, common baseline ``baseline``;
* ``dchp``  -- as ``chp`` with pair baseline ``gamma_i + zeta_j``;
* ``cmmhp`` -- Markov-modulated Hawkes per pair, Poisson ``gamma_i + zeta_j``
  while inactive, Hawkes with baseline ``(gamma_i + zeta_j)(1 + w_lambda)``
  while active, switching rates ``exp(-eta3 f_i)`` / ``exp(-eta3 f_j)``.

Two unstructured families are kept for comparison: ``immhp`` (independent MMHP
parameters per pair) and ``poisson`` (a homogeneous rate per pair).

Node ids are 1-based wherever they face the user (history keys, pair
arguments); parameter vectors are indexed from 0, so ``f[i - 1]`` is the rank
of node ``i``. Parameter containers only check shapes; support violations are
reported by :func:`log_prior` as ``-inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, Union

import numpy as np
from scipy.special import expit

from . import _kernels
from .data_io import EventDataset, PairHistory, build_pair_histories, make_dataset, EventRecord
from .pointproc import (
    CtmcParams,
    HawkesParams,
    StateTrajectory,
    hawkes_intensity,
    simulate_hawkes,
    simulate_mmhp,
)

MODEL_TAGS = ("chp", "dchp", "cmmhp", "immhp", "poisson")
HALF_NORMAL_LOGNORM = 0.5 * math.log(2.0 / math.pi)


def logistic(x):
    y = expit(x)
    return float(y) if np.ndim(y) == 0 else y


# ---------------------------------------------------------------- containers


@dataclass(frozen=True)
class EtaParams:
    eta1: float
    eta2: float
    eta3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.eta1, self.eta2, self.eta3], dtype=float)

    @classmethod
    def from_array(cls, a) -> "EtaParams":
        return cls(float(a[0]), float(a[1]), float(a[2]))


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ChpParams:
    baseline: float
    eta: EtaParams
    beta: float
    f: np.ndarray

    tag = "chp"

    def __post_init__(self):
        object.__setattr__(self, "f", _vec(self.f))

    @property
    def n_nodes(self) -> int:
        return len(self.f)


@dataclass(frozen=True)
class DchpParams:
    gamma: np.ndarray
    zeta: np.ndarray
    eta: EtaParams
    beta: float
    f: np.ndarray

    tag = "dchp"

    def __post_init__(self):
        for name in ("gamma", "zeta", "f"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        if not len(self.gamma) == len(self.zeta) == len(self.f):
            raise ValueError("gamma, zeta and f must have one entry per node")

    @property
    def n_nodes(self) -> int:
        return len(self.f)


@dataclass(frozen=True)
class CmmhpParams:
    """``init_active=None`` starts every pair's chain from its stationary law."""

    gamma: np.ndarray
    zeta: np.ndarray
    w_lambda: float
    eta: EtaParams
    beta: float
    f: np.ndarray
    init_active: float | None = None

    tag = "cmmhp"

    def __post_init__(self):
        for name in ("gamma", "zeta", "f"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        if not len(self.gamma) == len(self.zeta) == len(self.f):
            raise ValueError("gamma, zeta and f must have one entry per node")

    @property
    def n_nodes(self) -> int:
        return len(self.f)


@dataclass(frozen=True)
class ImmhpParams:
    """Independent MMHP per ordered pair; N x N arrays, diagonal ignored."""

    lam0: np.ndarray
    w_lambda: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    q1: np.ndarray
    q0: np.ndarray

    tag = "immhp"

    def __post_init__(self):
        for f_ in fields(self):
            object.__setattr__(self, f_.name, np.asarray(getattr(self, f_.name), dtype=float))
        shape = self.lam0.shape
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ValueError("pair parameters must be square N x N arrays")
        if any(getattr(self, f_.name).shape != shape for f_ in fields(self)):
            raise ValueError("all pair parameter arrays must share one shape")

    @property
    def n_nodes(self) -> int:
        return self.lam0.shape[0]


@dataclass(frozen=True)
class PoissonParams:
    rates: np.ndarray

    tag = "poisson"

    def __post_init__(self):
        object.__setattr__(self, "rates", np.asarray(self.rates, dtype=float))

    @property
    def n_nodes(self) -> int:
        return self.rates.shape[0]


ModelParams = Union[ChpParams, DchpParams, CmmhpParams, ImmhpParams, PoissonParams]

PARAM_CLASSES = {cls.tag: cls for cls in (ChpParams, DchpParams, CmmhpParams, ImmhpParams, PoissonParams)}


@dataclass(frozen=True)
class PairRates:
    """Per-pair MMHP parameter bundle."""

    lam0: float
    lam1: float
    alpha: float
    beta: float
    q1: float
    q0: float
    init_active: float | None = None

    @property
    def p_active0(self) -> float:
        if self.init_active is not None:
            return float(self.init_active)
        return self.q0 / (self.q0 + self.q1)

    def hawkes(self) -> HawkesParams:
        return HawkesParams(self.lam1, self.alpha, self.beta)

    def ctmc(self) -> CtmcParams:
        return CtmcParams(self.q1, self.q0)


# ---------------------------------------------------------------- histories


@dataclass(frozen=True)
class Network:
    """Pair histories packed for the compiled kernels.

    Pair ``p`` is the directed pair ``(src[p] + 1, dst[p] + 1)``; pairs run
    row-major over senders, skipping the diagonal.
    """

    n_nodes: int
    times: np.ndarray
    offsets: np.ndarray
    src: np.ndarray
    dst: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.src)

    def pair_times(self, p: int) -> np.ndarray:
        return self.times[self.offsets[p]:self.offsets[p + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def count_matrix(self) -> np.ndarray:
        W = np.zeros((self.n_nodes, self.n_nodes), dtype=np.int64)
        W[self.src, self.dst] = self.counts()
        return W

    def histories(self) -> dict[tuple[int, int], PairHistory]:
        return {
            (int(i) + 1, int(j) + 1): PairHistory(int(i) + 1, int(j) + 1, self.pair_times(p).copy())
            for p, (i, j) in enumerate(zip(self.src, self.dst))
        }

    def pair_index(self, i: int, j: int) -> int:
        """Packed index of 1-based pair (i, j)."""
        n = self.n_nodes
        a, b = i - 1, j - 1
        return a * (n - 1) + (b if b < a else b - 1)

    def truncate(self, t: float) -> "Network":
        """Histories restricted to events at or before ``t``."""
        parts = [self.pair_times(p) for p in range(self.n_pairs)]
        parts = [x[x <= t] for x in parts]
        return _pack(self.n_nodes, parts)


def pair_order(n: int) -> tuple[np.ndarray, np.ndarray]:
    src, dst = np.nonzero(~np.eye(n, dtype=bool))
    return src.astype(np.int64), dst.astype(np.int64)


def _pack(n: int, parts: list[np.ndarray]) -> Network:
    src, dst = pair_order(n)
    offsets = np.zeros(len(parts) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(x) for x in parts])
    times = np.ascontiguousarray(np.concatenate(parts) if parts else np.zeros(0), dtype=float)
    return Network(n, times, offsets, src, dst)


def as_network(data, n_nodes: int | None = None) -> Network:
    """Accept a :class:`Network`, an :class:`EventDataset` or a mapping of
    1-based pairs to histories (``PairHistory`` or time arrays)."""
    if isinstance(data, Network):
        if n_nodes is not None and n_nodes != data.n_nodes:
            raise ValueError(f"network has {data.n_nodes} nodes, parameters have {n_nodes}")
        return data
    if isinstance(data, EventDataset):
        if n_nodes is not None and n_nodes != data.n_nodes:
            raise ValueError(f"dataset has {data.n_nodes} nodes, parameters have {n_nodes}")
        data = build_pair_histories(data)
    if not isinstance(data, Mapping):
        raise TypeError(f"cannot interpret {type(data).__name__} as pair histories")
    if n_nodes is None:
        n_nodes = max((max(k) for k in data), default=0)
    src, dst = pair_order(n_nodes)
    parts = []
    for i, j in zip(src + 1, dst + 1):
        h = data.get((int(i), int(j)))
        if h is None:
            parts.append(np.zeros(0))
        else:
            parts.append(np.asarray(h.times if isinstance(h, PairHistory) else h, dtype=float))
    for k in data:
        if not (1 <= k[0] <= n_nodes and 1 <= k[1] <= n_nodes) or k[0] == k[1]:
            raise ValueError(f"history key {k} is not an off-diagonal pair of 1..{n_nodes}")
    return _pack(n_nodes, parts)


# ---------------------------------------------------------------- excitation


def excitation_g(eta: EtaParams, fi, fj):
    """``eta1 fi fj exp(-eta2 |fi - fj|) logistic(eta3 (fi - fj))``."""
    fi = np.asarray(fi, dtype=float)
    fj = np.asarray(fj, dtype=float)
    d = fi - fj
    out = eta.eta1 * fi * fj * np.exp(-eta.eta2 * np.abs(d)) * logistic(eta.eta3 * d)
    return float(out) if out.ndim == 0 else out


def _excitation_partials(eta: EtaParams, fi, fj):
    """g and its partials in (eta1, eta2, eta3, fi, fj), elementwise."""
    d = fi - fj
    sg = np.sign(d)
    e = np.exp(-eta.eta2 * np.abs(d))
    s = logistic(eta.eta3 * d)
    base = fi * fj * e * s
    g = eta.eta1 * base
    d_eta = np.stack([base, -np.abs(d) * g, g * d * (1.0 - s)])
    common = -eta.eta2 * sg + eta.eta3 * (1.0 - s)
    d_fi = eta.eta1 * e * s * (fj + fi * fj * common)
    d_fj = eta.eta1 * e * s * (fi - fi * fj * common)
    return g, d_eta, d_fi, d_fj


def mmhp_alpha(eta: EtaParams, fi, fj):
    """C-MMHP excitation: the logistic factor is replaced by the latent state."""
    fi = np.asarray(fi, dtype=float)
    fj = np.asarray(fj, dtype=float)
    out = eta.eta1 * fi * fj * np.exp(-eta.eta2 * np.abs(fi - fj))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- pair views


def pair_hawkes(p: ModelParams, i: int, j: int) -> HawkesParams:
    """Hawkes parameters of 1-based pair (i, j) for chp, dchp or poisson."""
    a, b = i - 1, j - 1
    if isinstance(p, ChpParams):
        return HawkesParams(p.baseline, excitation_g(p.eta, p.f[a], p.f[b]), p.beta)
    if isinstance(p, DchpParams):
        return HawkesParams(p.gamma[a] + p.zeta[b], excitation_g(p.eta, p.f[a], p.f[b]), p.beta)
    if isinstance(p, PoissonParams):
        return HawkesParams(float(p.rates[a, b]), 0.0, 1.0)
    raise TypeError(f"{type(p).__name__} is not a Hawkes-family model")


def cmmhp_rates(p: CmmhpParams | ImmhpParams, i: int, j: int) -> PairRates:
    """Per-pair (lam0, lam1, alpha, beta, q1, q0) for 1-based pair (i, j)."""
    a, b = i - 1, j - 1
    if isinstance(p, ImmhpParams):
        lam0 = float(p.lam0[a, b])
        return PairRates(lam0, lam0 * (1.0 + p.w_lambda[a, b]), float(p.alpha[a, b]),
                         float(p.beta[a, b]), float(p.q1[a, b]), float(p.q0[a, b]))
    lam0 = float(p.gamma[a] + p.zeta[b])
    return PairRates(
        lam0=lam0,
        lam1=lam0 * (1.0 + p.w_lambda),
        alpha=mmhp_alpha(p.eta, p.f[a], p.f[b]),
        beta=float(p.beta),
        q1=math.exp(-p.eta.eta3 * p.f[a]),
        q0=math.exp(-p.eta.eta3 * p.f[b]),
        init_active=p.init_active,
    )


def _hawkes_arrays(p: ModelParams, net: Network):
    fi, fj = (p.f[net.src], p.f[net.dst]) if hasattr(p, "f") else (None, None)
    if isinstance(p, ChpParams):
        return np.full(net.n_pairs, float(p.baseline)), excitation_g(p.eta, fi, fj), float(p.beta)
    if isinstance(p, DchpParams):
        return p.gamma[net.src] + p.zeta[net.dst], excitation_g(p.eta, fi, fj), float(p.beta)
    if isinstance(p, PoissonParams):
        return p.rates[net.src, net.dst].astype(float), np.zeros(net.n_pairs), 1.0
    raise TypeError(f"{type(p).__name__} is not a Hawkes-family model")


def mmhp_arrays(p: CmmhpParams | ImmhpParams, net: Network) -> dict[str, np.ndarray]:
    """Per-pair MMHP arrays in packed order (beta is per pair)."""
    s, d = net.src, net.dst
    if isinstance(p, ImmhpParams):
        lam0 = p.lam0[s, d]
        q1, q0 = p.q1[s, d], p.q0[s, d]
        return dict(lam0=lam0, lam1=lam0 * (1.0 + p.w_lambda[s, d]), alpha=p.alpha[s, d],
                    beta=p.beta[s, d], q1=q1, q0=q0, p_active=q0 / (q0 + q1))
    lam0 = p.gamma[s] + p.zeta[d]
    q1 = np.exp(-p.eta.eta3 * p.f[s])
    q0 = np.exp(-p.eta.eta3 * p.f[d])
    p_active = q0 / (q0 + q1) if p.init_active is None else np.full(net.n_pairs, float(p.init_active))
    return dict(lam0=lam0, lam1=lam0 * (1.0 + p.w_lambda), alpha=mmhp_alpha(p.eta, p.f[s], p.f[d]),
                beta=np.full(net.n_pairs, float(p.beta)), q1=q1, q0=q0, p_active=p_active)


# ---------------------------------------------------------------- likelihoods


def chp_intensity(p: ChpParams | DchpParams, pair: tuple[int, int], history, t):
    return hawkes_intensity(pair_hawkes(p, *pair), history, t)


def _hawkes_family_loglik(p, data, T):
    net = as_network(data, p.n_nodes)
    mu, alpha, beta = _hawkes_arrays(p, net)
    if beta <= 0 or np.any(mu < 0) or np.any(alpha < 0):
        return -math.inf
    ll, *_ = _kernels.hawkes_network_loglik_grad(mu, alpha, beta, net.times, net.offsets, float(T))
    return float(ll)


def chp_loglik(p: ChpParams, data, T: float) -> float:
    """Network log-likelihood; ``-inf`` if an event has zero intensity."""
    return _hawkes_family_loglik(p, data, T)


def dchp_loglik(p: DchpParams, data, T: float) -> float:
    return _hawkes_family_loglik(p, data, T)


def poisson_loglik(p: PoissonParams, data, T: float) -> float:
    return _hawkes_family_loglik(p, data, T)


def _hawkes_family_grad(p, data, T):
    net = as_network(data, p.n_nodes)
    n = p.n_nodes
    fi, fj = p.f[net.src], p.f[net.dst]
    g, d_eta, d_fi, d_fj = _excitation_partials(p.eta, fi, fj)
    mu = np.full(net.n_pairs, float(p.baseline)) if isinstance(p, ChpParams) else p.gamma[net.src] + p.zeta[net.dst]
    ll, dmu, dal, dbe = _kernels.hawkes_network_loglik_grad(mu, g, float(p.beta), net.times, net.offsets, float(T))
    grad = {
        "eta": d_eta @ dal,
        "beta": float(dbe.sum()),
        "f": np.bincount(net.src, dal * d_fi, n) + np.bincount(net.dst, dal * d_fj, n),
    }
    if isinstance(p, ChpParams):
        grad["baseline"] = float(dmu.sum())
    else:
        grad["gamma"] = np.bincount(net.src, dmu, n)
        grad["zeta"] = np.bincount(net.dst, dmu, n)
    return float(ll), grad


def chp_loglik_grad(p: ChpParams, data, T: float) -> tuple[float, dict]:
    """Log-likelihood and its gradient keyed by parameter name (``eta`` as a 3-vector)."""
    return _hawkes_family_grad(p, data, T)


def dchp_loglik_grad(p: DchpParams, data, T: float) -> tuple[float, dict]:
    return _hawkes_family_grad(p, data, T)


def cmmhp_pair_loglik_forward(bundle: PairRates, history, T: float) -> float:
    """Marginal log-likelihood of one pair, states held constant between events."""
    times = np.ascontiguousarray(history.times if isinstance(history, PairHistory) else history, dtype=float)
    ll, _ = _kernels.mmhp_forward(bundle.lam0, bundle.lam1, bundle.alpha, bundle.beta,
                                  bundle.q1, bundle.q0, bundle.p_active0, times, float(T))
    return float(ll)


def cmmhp_loglik(p: CmmhpParams | ImmhpParams, data, T: float) -> float:
    net = as_network(data, p.n_nodes)
    a = mmhp_arrays(p, net)
    if np.any(a["beta"] <= 0) or np.any(a["lam0"] < 0) or np.any(a["alpha"] < 0) or np.any(a["lam1"] < a["lam0"]):
        return -math.inf
    if np.any(a["q1"] < 0) or np.any(a["q0"] < 0) or np.any(a["q0"] + a["q1"] <= 0):
        return -math.inf
    return float(_kernels.mmhp_network_loglik(a["lam0"], a["lam1"], a["alpha"], a["beta"], a["q1"], a["q0"],
                                              a["p_active"], net.times, net.offsets, float(T)))


def loglik(p: ModelParams, data, T: float) -> float:
    if isinstance(p, (CmmhpParams, ImmhpParams)):
        return cmmhp_loglik(p, data, T)
    return _hawkes_family_loglik(p, data, T)


# ---------------------------------------------------------------- priors


def _half_normal(x) -> float:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        return -math.inf
    return float(np.sum(HALF_NORMAL_LOGNORM - 0.5 * x * x))


def _laplace(x, b: float) -> float:
    """Laplace(0, b) log density restricted to the nonnegative parameters."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        return -math.inf
    return float(np.sum(-math.log(2.0 * b) - x / b))


def _unit(x) -> float:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
        return -math.inf
    return 0.0


def log_prior(p: ModelParams, laplace_scale: float = 1.0) -> float:
    """Half-normal(0, 1) on eta, beta, w_lambda and the C-HP baseline;
    uniform on ranks; Laplace(0, ``laplace_scale``) on degree corrections.
    Independent-pair MMHP parameters get half-normal(0, 1) each.
    """
    if isinstance(p, PoissonParams):
        r = p.rates[~np.eye(p.n_nodes, dtype=bool)]
        return 0.0 if np.all(r >= 0) and np.all(np.isfinite(r)) else -math.inf
    if isinstance(p, ImmhpParams):
        off = ~np.eye(p.n_nodes, dtype=bool)
        return sum(_half_normal(getattr(p, f_.name)[off]) for f_ in fields(p))
    terms = [_half_normal(p.eta.as_array()), _half_normal(p.beta), _unit(p.f)]
    if isinstance(p, ChpParams):
        terms.append(_half_normal(p.baseline))
    else:
        terms += [_laplace(p.gamma, laplace_scale), _laplace(p.zeta, laplace_scale)]
        if isinstance(p, CmmhpParams):
            terms.append(_half_normal(p.w_lambda))
    return float(sum(terms))


def log_prior_grad(p: ModelParams, laplace_scale: float = 1.0) -> dict:
    """Gradient of :func:`log_prior` inside the support (chp / dchp / cmmhp)."""
    g = {"eta": -p.eta.as_array(), "beta": -float(p.beta), "f": np.zeros(p.n_nodes)}
    if isinstance(p, ChpParams):
        g["baseline"] = -float(p.baseline)
    else:
        g["gamma"] = np.full(p.n_nodes, -1.0 / laplace_scale)
        g["zeta"] = np.full(p.n_nodes, -1.0 / laplace_scale)
        if isinstance(p, CmmhpParams):
            g["w_lambda"] = -float(p.w_lambda)
    return g


def log_posterior(p: ModelParams, data, T: float, *, flat_prior: bool = False,
                  use_likelihood: bool = True, laplace_scale: float = 1.0) -> float:
    """Log prior plus log-likelihood; an out-of-support prior short-circuits.

    ``flat_prior`` drops the prior density but keeps its support check;
    ``use_likelihood=False`` returns the prior alone.
    """
    lp = log_prior(p, laplace_scale)
    if lp == -math.inf:
        return -math.inf
    if flat_prior:
        lp = 0.0
    if not use_likelihood:
        return lp
    return lp + loglik(p, data, T)


# ---------------------------------------------------------------- simulation


def pair_intensities(p: ModelParams, data, t: float, p_active=None) -> np.ndarray:
    """N x N matrix of pair intensities just after ``t`` given histories up to ``t``.

    For MMHP families the state is unobserved: ``p_active`` (per packed pair)
    mixes the two state intensities; by default it is the filtered probability
    of being active at ``t``.
    """
    net = as_network(data, p.n_nodes).truncate(t)
    n = p.n_nodes
    out = np.zeros((n, n))
    if isinstance(p, (CmmhpParams, ImmhpParams)):
        a = mmhp_arrays(p, net)
        if p_active is None:
            p_active = _kernels.mmhp_network_filter(a["lam0"], a["lam1"], a["alpha"], a["beta"], a["q1"],
                                                    a["q0"], a["p_active"], net.times, net.offsets, float(t))
        excite = np.array([a["alpha"][k] * np.sum(np.exp(-a["beta"][k] * (t - net.pair_times(k))))
                           for k in range(net.n_pairs)])
        vals = (1.0 - p_active) * a["lam0"] + p_active * (a["lam1"] + excite)
    else:
        mu, alpha, beta = _hawkes_arrays(p, net)
        excite = np.array([np.sum(np.exp(-beta * (t - net.pair_times(k)))) for k in range(net.n_pairs)])
        vals = mu + alpha * excite
    out[net.src, net.dst] = vals
    return out


def simulate_network(
    p: ModelParams,
    T: float,
    seed=None,
    *,
    day_boundaries=None,
    cohort: str = "sim",
    allow_unstable: bool = False,
) -> tuple[EventDataset, dict[tuple[int, int], StateTrajectory]]:
    """Simulate every directed pair independently on (0, T].

    Each pair draws from its own child of ``SeedSequence(seed)``. MMHP families
    also return the state trajectories keyed by 1-based pair.
    """
    n = p.n_nodes
    src, dst = pair_order(n)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(len(src))
    bounds = np.asarray(day_boundaries if day_boundaries is not None else [T], dtype=float)
    records = []
    trajs = {}
    for k, (a, b) in enumerate(zip(src + 1, dst + 1)):
        rng = np.random.default_rng(children[k])
        if isinstance(p, (CmmhpParams, ImmhpParams)):
            r = cmmhp_rates(p, int(a), int(b))
            z0 = None if r.init_active is None else int(rng.uniform() < r.init_active)
            times, traj = simulate_mmhp(r.hawkes(), r.lam0, r.ctmc(), T, rng, z0=z0, allow_unstable=allow_unstable)
            trajs[(int(a), int(b))] = traj
        else:
            times = simulate_hawkes(pair_hawkes(p, int(a), int(b)), T, rng, allow_unstable=allow_unstable)
        days = np.searchsorted(bounds, times, side="left") + 1
        records += [EventRecord(cohort, int(d), float(t), int(a), int(b)) for t, d in zip(times, days)]
    ds = make_dataset(records, n_nodes=n, horizon=T, day_boundaries=bounds.tolist(), cohort=cohort)
    return ds, trajs
