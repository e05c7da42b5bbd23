"""Parameter transforms, MAP fitting, adaptive Metropolis sampling and state decoding."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .data_io import EventDataset, EventRecord, make_dataset
from .models import (
    ChpParams,
    CmmhpParams,
    DchpParams,
    EtaParams,
    ImmhpParams,
    ModelParams,
    Network,
    PairRates,
    PoissonParams,
    as_network,
    chp_loglik_grad,
    cmmhp_rates,
    dchp_loglik_grad,
    log_posterior,
    log_prior,
    log_prior_grad,
    pair_order,
)
from .pointproc import HawkesParams

log = logging.getLogger(__name__)

BOUNDARY_NUDGE = 1e-9
FD_STEP = 1e-5
LOG_BOUNDS = (-25.0, 10.0)
LOGIT_BOUNDS = (-20.0, 20.0)


class FitError(RuntimeError):
    pass


class SamplerError(RuntimeError):
    pass


# ---------------------------------------------------------------- layouts

# (name, kind); size is resolved per node count. kind: "log" for positive
# scalars/vectors, "logit" for ranks.
_SCHEMA = {
    "hawkes": [("baseline", "log"), ("alpha", "log"), ("beta", "log")],
    "chp": [("baseline", "log"), ("eta", "log"), ("beta", "log"), ("f", "logit")],
    "dchp": [("gamma", "log"), ("zeta", "log"), ("eta", "log"), ("beta", "log"), ("f", "logit")],
    "cmmhp": [("gamma", "log"), ("zeta", "log"), ("w_lambda", "log"), ("eta", "log"), ("beta", "log"),
              ("f", "logit")],
    "immhp": [(k, "log") for k in ("lam0", "w_lambda", "alpha", "beta", "q1", "q0")],
    "poisson": [("rates", "log")],
}
_PER_NODE = {"gamma", "zeta", "f"}
_PER_PAIR = {"immhp", "poisson"}


@dataclass(frozen=True)
class Layout:
    tag: str
    n_nodes: int
    entries: tuple[tuple[str, int, str], ...]

    @classmethod
    def for_model(cls, tag: str, n_nodes: int) -> "Layout":
        if tag not in _SCHEMA:
            raise ValueError(f"unknown model tag {tag!r}")
        n_pairs = n_nodes * (n_nodes - 1)
        entries = []
        for name, kind in _SCHEMA[tag]:
            if tag in _PER_PAIR:
                size = n_pairs
            elif name in _PER_NODE:
                size = n_nodes
            elif name == "eta":
                size = 3
            else:
                size = 1
            entries.append((name, size, kind))
        return cls(tag, n_nodes, tuple(entries))

    @property
    def dim(self) -> int:
        return sum(s for _, s, _ in self.entries)

    def slices(self):
        k = 0
        for name, size, kind in self.entries:
            yield name, slice(k, k + size), kind
            k += size

    def kinds(self) -> np.ndarray:
        return np.concatenate([np.full(size, kind == "logit") for _, size, kind in self.entries])

    def column_names(self) -> list[str]:
        names = []
        src, dst = pair_order(self.n_nodes)
        for name, size, _ in self.entries:
            if self.tag in _PER_PAIR:
                names += [f"{name}[{i + 1},{j + 1}]" for i, j in zip(src, dst)]
            elif name == "eta":
                names += ["eta1", "eta2", "eta3"]
            elif size == 1:
                names.append(name)
            else:
                names += [f"{name}[{i + 1}]" for i in range(size)]
        return names

    # natural <-> flat --------------------------------------------------

    def flatten(self, p) -> np.ndarray:
        parts = []
        src, dst = pair_order(self.n_nodes)
        for name, _, _ in self.entries:
            v = getattr(p, name)
            if isinstance(v, EtaParams):
                v = v.as_array()
            elif self.tag in _PER_PAIR:
                v = np.asarray(v)[src, dst]
            parts.append(np.atleast_1d(np.asarray(v, dtype=float)))
        return np.concatenate(parts)

    def unflatten(self, x: np.ndarray):
        vals = {name: x[sl] for name, sl, _ in self.slices()}
        if self.tag in _PER_PAIR:
            src, dst = pair_order(self.n_nodes)
            mats = {}
            for name, v in vals.items():
                m = np.zeros((self.n_nodes, self.n_nodes))
                m[src, dst] = v
                mats[name] = m
            return ImmhpParams(**mats) if self.tag == "immhp" else PoissonParams(mats["rates"])
        kw = {}
        for name, v in vals.items():
            if name == "eta":
                kw[name] = EtaParams.from_array(v)
            elif name in _PER_NODE:
                kw[name] = v.copy()
            else:
                kw[name] = float(v[0])
        cls = {"hawkes": HawkesParams, "chp": ChpParams, "dchp": DchpParams, "cmmhp": CmmhpParams}[self.tag]
        return cls(**kw)

    # natural <-> unconstrained ----------------------------------------

    def to_theta(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float)
        logit = self.kinds()
        if np.any(x < 0) or np.any(x[logit] > 1) or not np.all(np.isfinite(x)):
            raise ValueError("parameters outside the support cannot be transformed")
        low = x <= 0
        high = logit & (x >= 1)
        if np.any(low | high):
            warnings.warn("boundary parameter values nudged inward by 1e-9", stacklevel=3)
            x[low] = BOUNDARY_NUDGE
            x[high] = 1.0 - BOUNDARY_NUDGE
        th = np.log(x)
        th[logit] = np.log(x[logit]) - np.log1p(-x[logit])
        return th

    def from_theta(self, th: np.ndarray) -> np.ndarray:
        th = np.asarray(th, dtype=float)
        logit = self.kinds()
        x = np.exp(th)
        x[logit] = 1.0 / (1.0 + np.exp(-th[logit]))
        return x

    def jac_diag(self, th: np.ndarray) -> np.ndarray:
        """d x / d theta, elementwise."""
        x = self.from_theta(th)
        logit = self.kinds()
        d = x.copy()
        d[logit] = x[logit] * (1.0 - x[logit])
        return d

    def log_jacobian(self, th: np.ndarray) -> float:
        return float(np.sum(np.log(self.jac_diag(th))))

    def bounds(self) -> list[tuple[float, float]]:
        return [LOGIT_BOUNDS if k else LOG_BOUNDS for k in self.kinds()]


def model_tag(p) -> str:
    return "hawkes" if isinstance(p, HawkesParams) else p.tag


def layout_of(p) -> Layout:
    n = 1 if isinstance(p, HawkesParams) else p.n_nodes
    return Layout.for_model(model_tag(p), n)


@dataclass(frozen=True)
class UnconstrainedVector:
    theta: np.ndarray
    layout: Layout

    @property
    def log_jacobian(self) -> float:
        return self.layout.log_jacobian(self.theta)


def to_unconstrained(p) -> UnconstrainedVector:
    """log for positive parameters, logit for ranks."""
    lay = layout_of(p)
    return UnconstrainedVector(lay.to_theta(lay.flatten(p)), lay)


def from_unconstrained(theta, layout: Layout | None = None):
    if isinstance(theta, UnconstrainedVector):
        theta, layout = theta.theta, theta.layout
    if layout is None:
        raise ValueError("a layout is required for a bare vector")
    return layout.unflatten(layout.from_theta(theta))


# ---------------------------------------------------------------- objectives


def _hawkes_logpost_grad(p: HawkesParams, times: np.ndarray, T: float):
    ll, dmu, dal, dbe = _kernels.hawkes_pair_loglik_grad(p.baseline, p.alpha, p.beta, times, float(T))
    x = np.array([p.baseline, p.alpha, p.beta])
    lp = float(np.sum(0.5 * math.log(2 / math.pi) - 0.5 * x * x))
    return ll + lp, np.array([dmu, dal, dbe]) - x


@dataclass
class Target:
    """Log posterior over the unconstrained vector of one model and dataset."""

    layout: Layout
    data: object
    T: float
    laplace_scale: float = 1.0
    flat_prior: bool = False
    use_likelihood: bool = True

    def __post_init__(self):
        if self.layout.tag == "hawkes":
            h = self.data
            self.data = np.ascontiguousarray(getattr(h, "times", h), dtype=float)
        else:
            self.data = as_network(self.data, self.layout.n_nodes)

    @property
    def analytic(self) -> bool:
        return self.layout.tag in ("hawkes", "chp", "dchp") and self.use_likelihood and not self.flat_prior

    def params(self, th):
        return from_unconstrained(th, self.layout)

    def logpost(self, th) -> float:
        p = self.params(th)
        if self.layout.tag == "hawkes":
            if not self.use_likelihood:
                x = self.layout.flatten(p)
                return float(np.sum(0.5 * math.log(2 / math.pi) - 0.5 * x * x))
            return _hawkes_logpost_grad(p, self.data, self.T)[0]
        return log_posterior(p, self.data, self.T, flat_prior=self.flat_prior,
                             use_likelihood=self.use_likelihood, laplace_scale=self.laplace_scale)

    def logpost_grad(self, th) -> tuple[float, np.ndarray]:
        if not self.analytic:
            return self.logpost(th), self._fd_grad(th)
        p = self.params(th)
        if self.layout.tag == "hawkes":
            val, g = _hawkes_logpost_grad(p, self.data, self.T)
            return val, g * self.layout.jac_diag(th)
        fn = chp_loglik_grad if self.layout.tag == "chp" else dchp_loglik_grad
        ll, g_ll = fn(p, self.data, self.T)
        lp = log_prior(p, self.laplace_scale)
        g_lp = log_prior_grad(p, self.laplace_scale)
        g = np.concatenate([np.atleast_1d(g_ll[name] + g_lp[name]) for name, _, _ in self.layout.entries])
        return ll + lp, g * self.layout.jac_diag(th)

    def _fd_grad(self, th) -> np.ndarray:
        th = np.asarray(th, dtype=float)
        g = np.empty_like(th)
        for k in range(len(th)):
            h = FD_STEP * max(1.0, abs(th[k]))
            up = th.copy()
            dn = th.copy()
            up[k] += h
            dn[k] -= h
            g[k] = (self.logpost(up) - self.logpost(dn)) / (2 * h)
        return g

    def sampling_logp(self, th) -> float:
        v = self.logpost(th)
        if not math.isfinite(v):
            return -math.inf
        return v + self.layout.log_jacobian(th)


# ---------------------------------------------------------------- init


def initial_params(tag: str, net: Network | np.ndarray, T: float):
    """Ranks from normalized win fractions; rates from event counts."""
    if tag == "hawkes":
        n_ev = len(net)
        rate = max(n_ev / T, 1e-3)
        return HawkesParams(0.5 * rate, 0.5, 1.0)
    n = net.n_nodes
    W = net.count_matrix().astype(float)
    wins, losses = W.sum(1), W.sum(0)
    tot = wins + losses
    frac = np.where(tot > 0, wins / np.maximum(tot, 1), 0.5)
    span = frac.max() - frac.min()
    f = 0.1 + 0.8 * (frac - frac.min()) / span if span > 0 else np.full(n, 0.5)
    mean_rate = max(W.sum() / (n * (n - 1) * T), 1e-4)
    eta = EtaParams(1.0, 0.5, 1.0)
    if tag == "chp":
        return ChpParams(0.5 * mean_rate, eta, 1.0, f)
    gamma = np.maximum(wins / ((n - 1) * T), 1e-4) * 0.5
    zeta = np.maximum(losses / ((n - 1) * T), 1e-4) * 0.5
    if tag == "dchp":
        return DchpParams(0.5 * gamma, 0.5 * zeta, eta, 1.0, f)
    if tag == "cmmhp":
        return CmmhpParams(0.25 * gamma, 0.25 * zeta, 1.0, eta, 1.0, f)
    rates = np.maximum(W / T, 1e-4)
    np.fill_diagonal(rates, 0.0)
    if tag == "poisson":
        return PoissonParams(rates)
    if tag == "immhp":
        ones = np.ones((n, n))
        return ImmhpParams(0.5 * rates, ones, 0.5 * ones, ones, 0.5 * ones, 0.5 * ones)
    raise ValueError(f"unknown model tag {tag!r}")


# ---------------------------------------------------------------- MAP


@dataclass
class FitConfig:
    max_iter: int = 500
    tol: float = 1e-7
    restarts: int = 3
    seed: int = 0
    restart_scale: float = 0.5
    laplace_scale: float = 1.0
    flat_prior: bool = False


@dataclass
class MapResult:
    params: object
    log_posterior: float
    converged: bool
    grad_norm: float
    n_iter: int
    restarts_finite: int

    def __iter__(self):
        yield self.params
        yield self.log_posterior


def _optimize(target: Target, th0: np.ndarray, cfg: FitConfig):
    # L-BFGS-B's first step has length |grad|; rescale so it stays O(1).
    v0, g0 = target.logpost_grad(th0)
    scale = max(1.0, float(np.linalg.norm(g0)), abs(v0) * 1e-2) if math.isfinite(v0) else 1.0

    def fun(th):
        v, g = target.logpost_grad(th)
        if not math.isfinite(v) or not np.all(np.isfinite(g)):
            return 1e100, np.zeros_like(th)
        return -v / scale, -g / scale

    res = minimize(fun, th0, jac=True, method="L-BFGS-B", bounds=target.layout.bounds(),
                   options={"maxiter": cfg.max_iter, "ftol": cfg.tol * 1e-3 / scale,
                            "gtol": cfg.tol * 10 / scale, "maxfun": 20 * cfg.max_iter})
    res.fun = res.fun * scale
    res.jac = res.jac * scale
    return res


def map_fit(tag: str, data, T: float, config: FitConfig | None = None, *, n_nodes: int | None = None,
            init=None) -> MapResult:
    """Maximize the log posterior over the unconstrained vector (no Jacobian term).

    The first start is the data-driven initialization (or ``init``); further
    restarts jitter it with seeded Gaussian noise. Analytic gradients are used
    for ``hawkes``, ``chp`` and ``dchp``; central differences otherwise.
    """
    cfg = config or FitConfig()
    if tag == "immhp":
        return _map_fit_pairs(data, T, cfg, n_nodes)
    if tag == "hawkes":
        lay = Layout.for_model("hawkes", 1)
    else:
        data = as_network(data, n_nodes)
        lay = Layout.for_model(tag, data.n_nodes)
    target = Target(lay, data, T, cfg.laplace_scale, cfg.flat_prior)
    p0 = init if init is not None else initial_params(tag, target.data, T)
    th0 = np.clip(to_unconstrained(p0).theta, [b[0] for b in lay.bounds()], [b[1] for b in lay.bounds()])
    rng = np.random.default_rng(cfg.seed)
    best = None
    n_finite = 0
    for r in range(max(1, cfg.restarts)):
        start = th0 if r == 0 else th0 + cfg.restart_scale * rng.standard_normal(lay.dim)
        if not math.isfinite(target.logpost(start)):
            continue
        n_finite += 1
        res = _optimize(target, start, cfg)
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitError(f"log posterior is not finite at any of {cfg.restarts} initializations")
    gnorm = float(np.linalg.norm(best.jac))
    if not best.success:
        log.warning("MAP fit did not converge (%s); final gradient norm %.3g", best.message, gnorm)
    return MapResult(from_unconstrained(best.x, lay), -float(best.fun), bool(best.success), gnorm,
                     int(best.nit), n_finite)


class _PairTarget:
    """Independent-pair MMHP posterior for one ordered pair."""

    bounds = [LOG_BOUNDS] * 6

    def __init__(self, times, T):
        self.times = np.ascontiguousarray(times, dtype=float)
        self.T = float(T)

    def logpost(self, th) -> float:
        lam0, w, alpha, beta, q1, q0 = np.exp(th)
        lp = float(np.sum(0.5 * math.log(2 / math.pi) - 0.5 * np.exp(2 * np.asarray(th))))
        ll, _ = _kernels.mmhp_forward(lam0, lam0 * (1 + w), alpha, beta, q1, q0, q0 / (q0 + q1), self.times, self.T)
        return lp + ll if math.isfinite(ll) else -math.inf

    def sampling_logp(self, th) -> float:
        v = self.logpost(th)
        return v + float(np.sum(th)) if math.isfinite(v) else -math.inf


def _map_fit_pairs(data, T, cfg: FitConfig, n_nodes):
    net = as_network(data, n_nodes)
    n = net.n_nodes
    lay = Layout.for_model("immhp", n)
    th_all = to_unconstrained(initial_params("immhp", net, T)).theta.reshape(6, -1)
    total = 0.0
    ok = True
    gmax = 0.0
    iters = 0
    for p in range(net.n_pairs):
        tgt = _PairTarget(net.pair_times(p), T)

        def fun(th, tgt=tgt):
            v = tgt.logpost(th)
            if not math.isfinite(v):
                return 1e100
            return -v

        res = minimize(fun, th_all[:, p], method="L-BFGS-B", bounds=tgt.bounds,
                       options={"maxiter": cfg.max_iter})
        th_all[:, p] = res.x
        total += -res.fun
        ok &= bool(res.success)
        gmax = max(gmax, float(np.linalg.norm(res.jac)))
        iters = max(iters, int(res.nit))
    return MapResult(from_unconstrained(th_all.ravel(), lay), total, ok, gmax, iters, 1)


# ---------------------------------------------------------------- sampling


def adaptive_metropolis(
    logp: Callable[[np.ndarray], float],
    theta0: np.ndarray,
    n_warmup: int,
    n_draws: int,
    rng: np.random.Generator,
    *,
    thin: int = 1,
    target_accept: float = 0.3,
    init_scale: float = 0.1,
):
    """Random-walk Metropolis with covariance and scale adapted during warmup only.

    Returns (draws, logp values, post-warmup acceptance rate, warmup acceptance count).
    """
    th = np.array(theta0, dtype=float)
    d = len(th)
    lp = logp(th)
    if not math.isfinite(lp):
        raise SamplerError("initial point has non-finite log density")
    chol = np.eye(d) * init_scale
    log_scale = 0.0
    mean = th.copy()
    m2 = np.zeros((d, d))
    warm_acc = 0
    for it in range(n_warmup):
        prop = th + math.exp(log_scale) * (chol @ rng.standard_normal(d))
        lq = logp(prop)
        acc = math.exp(min(0.0, lq - lp)) if math.isfinite(lq) else 0.0
        if rng.uniform() < acc:
            th, lp = prop, lq
            warm_acc += 1
        log_scale += (acc - target_accept) / (it + 1) ** 0.6
        delta = th - mean
        mean += delta / (it + 1)
        m2 += np.outer(delta, th - mean)
        # empirical covariance replaces the initial guess once enough history exists
        if it >= 199 and (it + 1) % 50 == 0:
            try:
                new_chol = np.linalg.cholesky(m2 / it + 1e-10 * np.eye(d))
            except np.linalg.LinAlgError:
                continue
            chol = 2.38 / math.sqrt(d) * new_chol
            if it == 199:
                log_scale = 0.0
    if n_warmup > 0 and warm_acc == 0:
        raise SamplerError(f"all {n_warmup} warmup proposals rejected (log density {lp:.4g}, dim {d})")
    step = math.exp(log_scale)
    draws = np.empty((n_draws, d))
    lps = np.empty(n_draws)
    accepted = 0
    for k in range(n_draws * thin):
        prop = th + step * (chol @ rng.standard_normal(d))
        lq = logp(prop)
        if math.isfinite(lq) and math.log(rng.uniform()) < lq - lp:
            th, lp = prop, lq
            accepted += 1
        if (k + 1) % thin == 0:
            draws[k // thin] = th
            lps[k // thin] = lp
    return draws, lps, accepted / max(1, n_draws * thin), warm_acc


@dataclass
class SampleConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    thin: int = 1
    seed: int = 0
    target_accept: float = 0.3
    init_jitter: float = 0.05
    laplace_scale: float = 1.0
    use_likelihood: bool = True
    n_jobs: int = 1


@dataclass
class PosteriorDraws:
    layout: Layout
    theta: np.ndarray
    log_posterior: np.ndarray
    chain: np.ndarray
    acceptance: list[float]
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def tag(self) -> str:
        return self.layout.tag

    def values(self) -> np.ndarray:
        """Draws on the natural scale, one row per draw."""
        return np.array([self.layout.from_theta(t) for t in self.theta])

    def params(self, k: int):
        return from_unconstrained(self.theta[k], self.layout)

    def __iter__(self):
        for k in range(len(self)):
            yield self.params(k)

    def column(self, name: str) -> np.ndarray:
        sl = dict((n, s) for n, s, _ in self.layout.slices())[name]
        return self.values()[:, sl]

    def rank_summary(self) -> tuple[np.ndarray, np.ndarray]:
        f = self.column("f")
        return f.mean(0), f.std(0, ddof=1) if len(f) > 1 else np.zeros(f.shape[1])

    def split_rhat(self) -> np.ndarray:
        return split_rhat(self.theta, self.chain)


def split_rhat(theta: np.ndarray, chain: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction per coordinate."""
    halves = []
    for c in np.unique(chain):
        x = theta[chain == c]
        h = len(x) // 2
        if h < 2:
            continue
        halves += [x[:h], x[h:2 * h]]
    if len(halves) < 2:
        return np.full(theta.shape[1], np.nan)
    m = min(len(h) for h in halves)
    X = np.stack([h[:m] for h in halves])
    W = X.var(axis=1, ddof=1).mean(0)
    B = m * X.mean(axis=1).var(axis=0, ddof=1)
    var = (m - 1) / m * W + B / m
    return np.sqrt(var / np.where(W > 0, W, np.nan))


START_LOG_BOX = (-12.0, 5.0)
START_LOGIT_BOX = (-5.0, 5.0)


def _sampling_start(th: np.ndarray, lay: Layout) -> np.ndarray:
    """Pull starting values off the far tails, where random-walk chains stall."""
    logit = lay.kinds()
    lo = np.where(logit, START_LOGIT_BOX[0], START_LOG_BOX[0])
    hi = np.where(logit, START_LOGIT_BOX[1], START_LOG_BOX[1])
    return np.clip(th, lo, hi)


def _run_chain(args):
    target, th0, cfg, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    start = th0 + cfg.init_jitter * rng.standard_normal(len(th0))
    if not math.isfinite(target.sampling_logp(start)):
        start = th0
    return adaptive_metropolis(target.sampling_logp, start, cfg.warmup, cfg.draws, rng,
                               thin=cfg.thin, target_accept=cfg.target_accept)


def sample_posterior(tag: str, data, T: float, config: SampleConfig | None = None, *,
                     n_nodes: int | None = None, init=None) -> PosteriorDraws:
    """Adaptive random-walk Metropolis in unconstrained space.

    Chains use independent children of ``SeedSequence(config.seed)`` and start
    from ``init`` (default: the data-driven initialization) plus small jitter.
    ``use_likelihood=False`` samples the prior.
    """
    cfg = config or SampleConfig()
    if tag == "hawkes":
        lay = Layout.for_model("hawkes", 1)
    else:
        data = as_network(data, n_nodes)
        lay = Layout.for_model(tag, data.n_nodes)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    if tag == "immhp":
        return _sample_pairs(data, T, cfg, lay, seeds)
    target = Target(lay, data, T, cfg.laplace_scale, use_likelihood=cfg.use_likelihood)
    p0 = init if init is not None else initial_params(tag, target.data, T)
    th0 = _sampling_start(to_unconstrained(p0).theta, lay)
    jobs = [(target, th0, cfg, s) for s in seeds]
    if cfg.n_jobs > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.n_jobs, cfg.chains)) as ex:
            results = list(ex.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]
    theta = np.concatenate([r[0] for r in results])
    lps = np.concatenate([r[1] for r in results])
    chain = np.repeat(np.arange(cfg.chains), cfg.draws)
    if cfg.use_likelihood:
        lps = lps - np.array([lay.log_jacobian(t) for t in theta])
    return PosteriorDraws(lay, theta, lps, chain, [float(r[2]) for r in results], _config_record(cfg))


def _config_record(cfg: SampleConfig) -> dict:
    # worker count never changes the draws, so it stays out of the metadata
    rec = asdict(cfg)
    rec.pop("n_jobs")
    return rec


def _sample_pairs(net: Network, T, cfg: SampleConfig, lay: Layout, seeds) -> PosteriorDraws:
    init = to_unconstrained(initial_params("immhp", net, T)).theta.reshape(6, -1)
    P = net.n_pairs
    theta = np.empty((cfg.chains * cfg.draws, 6, P))
    lps = np.zeros(cfg.chains * cfg.draws)
    acc = np.zeros(cfg.chains)
    for c, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        for p in range(P):
            tgt = _PairTarget(net.pair_times(p), T)
            fit = minimize(lambda th: -tgt.logpost(th) if math.isfinite(tgt.logpost(th)) else 1e100,
                           init[:, p], method="L-BFGS-B", bounds=tgt.bounds)
            d, l, a, _ = adaptive_metropolis(tgt.sampling_logp, fit.x, cfg.warmup, cfg.draws, rng,
                                             thin=cfg.thin, target_accept=cfg.target_accept)
            sl = slice(c * cfg.draws, (c + 1) * cfg.draws)
            theta[sl, :, p] = d
            lps[sl] += l - d.sum(1)
            acc[c] += a / P
    chain = np.repeat(np.arange(cfg.chains), cfg.draws)
    return PosteriorDraws(lay, theta.reshape(len(theta), -1), lps, chain, acc.tolist(), _config_record(cfg))


def draws_from_params(params_list, config: dict | None = None) -> PosteriorDraws:
    """Wrap fixed parameter sets (e.g. a point estimate) as draws."""
    lay = layout_of(params_list[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        theta = np.array([lay.to_theta(lay.flatten(p)) for p in params_list])
    return PosteriorDraws(lay, theta, np.full(len(theta), np.nan), np.zeros(len(theta), dtype=int),
                          [float("nan")], config or {})


def write_draws(draws: PosteriorDraws, path) -> None:
    """One row per draw on the natural scale; ``#`` header lines carry metadata."""
    import json

    vals = draws.values()
    with open(path, "w") as fh:
        fh.write(f"# model={draws.tag}\n# n_nodes={draws.layout.n_nodes}\n")
        fh.write(f"# config={json.dumps(draws.config, sort_keys=True)}\n")
        fh.write(f"# acceptance={json.dumps(draws.acceptance)}\n")
        fh.write(",".join(["chain", "draw", "log_posterior"] + [f'"{c}"' if "," in c else c
                                                                for c in draws.layout.column_names()]) + "\n")
        counters: dict[int, int] = {}
        for k in range(len(draws)):
            c = int(draws.chain[k])
            counters[c] = counters.get(c, 0) + 1
            row = [str(c), str(counters[c]), repr(float(draws.log_posterior[k]))]
            row += [repr(float(v)) for v in vals[k]]
            fh.write(",".join(row) + "\n")


def read_draws(path) -> PosteriorDraws:
    import csv
    import json

    meta = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while lines[i].startswith("#"):
        k, v = lines[i][1:].strip().split("=", 1)
        meta[k] = v
        i += 1
    rows = list(csv.reader(lines[i + 1:]))
    lay = Layout.for_model(meta["model"], int(meta["n_nodes"]))
    vals = np.array([[float(x) for x in r[3:]] for r in rows]).reshape(len(rows), lay.dim)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        theta = np.array([lay.to_theta(v) for v in vals]) if len(vals) else np.zeros((0, lay.dim))
    return PosteriorDraws(lay, theta, np.array([float(r[2]) for r in rows]),
                          np.array([int(r[0]) for r in rows]), json.loads(meta.get("acceptance", "[]")),
                          json.loads(meta.get("config", "{}")))


def params_to_dict(p) -> dict:
    """JSON-ready record of a parameter set keyed by column name."""
    lay = layout_of(p)
    vals = lay.flatten(p)
    out = {"model": lay.tag, "n_nodes": lay.n_nodes,
           "values": {c: float(v) for c, v in zip(lay.column_names(), vals)}}
    if isinstance(p, CmmhpParams) and p.init_active is not None:
        out["init_active"] = float(p.init_active)
    return out


def params_from_dict(d: dict):
    lay = Layout.for_model(d["model"], int(d["n_nodes"]))
    vals = d["values"]
    missing = [c for c in lay.column_names() if c not in vals]
    if missing:
        raise ValueError(f"parameter record lacks {missing[:5]}")
    p = lay.unflatten(np.array([float(vals[c]) for c in lay.column_names()]))
    if "init_active" in d and isinstance(p, CmmhpParams):
        p = replace(p, init_active=float(d["init_active"]))
    return p


# ---------------------------------------------------------------- decoding


@dataclass
class PairDecoding:
    """``labels``: Viterbi state per event (1 active). ``prob_active``: smoothed
    probability per event. ``interval_probs``: smoothed (inactive, active) per
    inter-event interval including the trailing one to T."""

    times: np.ndarray
    labels: np.ndarray
    prob_active: np.ndarray
    interval_probs: np.ndarray
    path_logprob: float

    @property
    def marginal_labels(self) -> np.ndarray:
        """Per-event argmax of the smoothed probabilities, ties to active."""
        return (self.prob_active >= 0.5).astype(int)


@dataclass
class StateDecoding:
    pairs: dict[tuple[int, int], PairDecoding]

    def active_fraction(self) -> float:
        lab = np.concatenate([d.labels for d in self.pairs.values()]) if self.pairs else np.zeros(0)
        return float(lab.mean()) if len(lab) else float("nan")


def decode_pair(bundle: PairRates, times, T: float) -> PairDecoding:
    times = np.ascontiguousarray(times, dtype=float)
    if len(times) == 0:
        return PairDecoding(times, np.zeros(0, dtype=int), np.zeros(0), np.zeros((0, 2)), float("nan"))
    args = (bundle.lam0, bundle.lam1, bundle.alpha, bundle.beta, bundle.q1, bundle.q0, bundle.p_active0,
            times, float(T))
    path, best = _kernels.mmhp_viterbi(*args)
    gam, _ = _kernels.mmhp_forward_backward(*args)
    return PairDecoding(times, path[:-1].copy(), gam[:-1, 1].copy(), gam, float(best))


def decode_states(p: CmmhpParams | ImmhpParams, data, T: float) -> StateDecoding:
    """Viterbi labels and forward-backward smoothing per pair on the interval chain."""
    net = as_network(data, p.n_nodes)
    out = {}
    for k, (i, j) in enumerate(zip(net.src + 1, net.dst + 1)):
        out[(int(i), int(j))] = decode_pair(cmmhp_rates(p, int(i), int(j)), net.pair_times(k), T)
    return StateDecoding(out)


def split_by_state(ds: EventDataset, decoding: StateDecoding) -> tuple[EventDataset, EventDataset]:
    """(active, inactive) event streams on the original clock."""
    label = {}
    for (i, j), d in decoding.pairs.items():
        for t, z in zip(d.times, d.labels):
            label[(i, j, float(t))] = int(z)
    act, inact = [], []
    for ev in ds.events:
        (act if label.get((ev.winner, ev.loser, ev.time), 1) == 1 else inact).append(ev)

    def build(evs):
        return make_dataset([EventRecord(e.cohort, e.day, e.time, e.winner, e.loser) for e in evs],
                            n_nodes=ds.n_nodes, horizon=ds.horizon, day_boundaries=ds.day_boundaries,
                            cohort=ds.cohort)

    return build(act), build(inact)
