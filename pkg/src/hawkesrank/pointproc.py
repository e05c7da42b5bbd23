"""Exponential-kernel Hawkes processes, two-state CTMCs and their MMHP combination.

Matrices from :func:`ctmc_transition` follow the generator's layout: row and
column 0 are the *active* state, 1 the *inactive* state. Elsewhere states are
referred to by value, ``1`` active and ``0`` inactive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .data_io import PairHistory


class UnstableProcessError(ValueError):
    """Raised when simulating a Hawkes process with branching ratio >= 1."""


def _times(history) -> np.ndarray:
    if isinstance(history, PairHistory):
        return history.times
    return np.asarray(history, dtype=float)


@dataclass(frozen=True)
class HawkesParams:
    baseline: float
    alpha: float
    beta: float

    def __post_init__(self):
        vals = (self.baseline, self.alpha, self.beta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite Hawkes parameters {vals}")
        if self.baseline < 0 or self.alpha < 0 or self.beta <= 0:
            raise ValueError(f"need baseline >= 0, alpha >= 0, beta > 0; got {vals}")


@dataclass(frozen=True)
class CtmcParams:
    """Rates of leaving the active (``q1``) and inactive (``q0``) states.

    A zero rate pins the chain in that state; both zero is rejected.
    """

    q1: float
    q0: float

    def __post_init__(self):
        if not (math.isfinite(self.q1) and math.isfinite(self.q0)):
            raise ValueError("CTMC rates must be finite")
        if self.q1 < 0 or self.q0 < 0 or self.q1 + self.q0 <= 0:
            raise ValueError(f"need q1, q0 >= 0 with q1 + q0 > 0; got {self.q1}, {self.q0}")


@dataclass(frozen=True)
class StateTrajectory:
    z0: int
    switch_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    start: float = 0.0
    horizon: float = math.inf

    def state_at(self, t: float) -> int:
        """State at time ``t`` (right-continuous)."""
        k = int(np.searchsorted(self.switch_times, t, side="right"))
        return self.z0 if k % 2 == 0 else 1 - self.z0

    @property
    def final_state(self) -> int:
        return self.z0 if len(self.switch_times) % 2 == 0 else 1 - self.z0

    def segments(self) -> list[tuple[float, float, int]]:
        """(start, end, state) pieces covering [start, horizon]."""
        edges = [self.start, *self.switch_times.tolist(), self.horizon]
        z = self.z0
        out = []
        for a, b in zip(edges, edges[1:]):
            out.append((a, b, z))
            z = 1 - z
        return out

    def active_time(self) -> float:
        return sum(b - a for a, b, z in self.segments() if z == 1)


def hawkes_intensity(p: HawkesParams, history, t):
    """``baseline + alpha * sum_{t_k < t} exp(-beta (t - t_k))``; ``t`` may be an array."""
    times = _times(history)
    t_arr = np.asarray(t, dtype=float)
    lag = t_arr[..., None] - times
    contrib = np.where(lag > 0, np.exp(-p.beta * np.where(lag > 0, lag, 0.0)), 0.0)
    out = p.baseline + p.alpha * contrib.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def hawkes_compensator(p: HawkesParams, history, t0: float, t1: float) -> float:
    """Integral of the intensity over ``[t0, t1]`` in closed form."""
    if t1 < t0:
        raise ValueError(f"t1={t1} precedes t0={t0}")
    times = _times(history)
    times = times[times < t1]
    base = p.baseline * (t1 - t0) if p.baseline > 0 else 0.0
    if len(times) == 0 or p.alpha == 0:
        return base
    lo = np.maximum(t0, times) - times
    return base + p.alpha / p.beta * float(np.sum(np.exp(-p.beta * lo) - np.exp(-p.beta * (t1 - times))))


def hawkes_interval_compensators(p: HawkesParams, history, T: float) -> np.ndarray:
    """Compensator over (t_{m-1}, t_m] for m = 1..M, then over (t_M, T]."""
    times = np.ascontiguousarray(_times(history), dtype=float)
    return _kernels.hawkes_interval_compensators(p.baseline, p.alpha, p.beta, times, float(T))


def _excitation_at(alpha: float, beta: float, history: np.ndarray, t: float) -> float:
    """Right-limit excitation at ``t`` from events at or before ``t``."""
    h = history[history <= t]
    if len(h) == 0 or alpha == 0:
        return 0.0
    return alpha * float(np.sum(np.exp(-beta * (t - h))))


def _check_stable(alpha: float, beta: float, allow_unstable: bool) -> None:
    if alpha >= beta and not allow_unstable:
        raise UnstableProcessError(
            f"alpha={alpha} >= beta={beta}: branching ratio >= 1; pass allow_unstable=True to override")


def simulate_hawkes(
    p: HawkesParams,
    T: float,
    seed=None,
    *,
    start: float = 0.0,
    history: Sequence[float] = (),
    allow_unstable: bool = False,
) -> np.ndarray:
    """Ogata thinning on ``(start, T]``.

    ``history`` holds events at or before ``start`` whose excitation carries
    into the simulated window; only new events are returned.
    """
    if T <= start:
        raise ValueError(f"horizon {T} must exceed start {start}")
    _check_stable(p.alpha, p.beta, allow_unstable)
    rng = np.random.default_rng(seed)
    S = _excitation_at(p.alpha, p.beta, np.asarray(history, dtype=float), start)
    t = start
    out = []
    while True:
        bound = p.baseline + S
        if bound <= 0:
            break
        w = rng.exponential(1.0 / bound)
        t += w
        if t > T:
            break
        S *= math.exp(-p.beta * w)
        if rng.uniform() * bound <= p.baseline + S:
            out.append(t)
            S += p.alpha
    return np.asarray(out)


def ctmc_transition(c: CtmcParams, dt: float) -> np.ndarray:
    """2x2 transition matrix over ``dt``, rows/cols ordered (active, inactive)."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    s = c.q0 + c.q1
    e = math.exp(-s * dt)
    stay_active = c.q0 / s + c.q1 / s * e
    stay_inactive = c.q1 / s + c.q0 / s * e
    return np.array([[stay_active, 1.0 - stay_active], [1.0 - stay_inactive, stay_inactive]])


def ctmc_stationary(c: CtmcParams) -> tuple[float, float]:
    """(pi_active, pi_inactive)."""
    s = c.q0 + c.q1
    return c.q0 / s, c.q1 / s


def simulate_ctmc(c: CtmcParams, z0: int, T: float, seed=None, *, start: float = 0.0) -> StateTrajectory:
    if T <= start:
        raise ValueError(f"horizon {T} must exceed start {start}")
    if z0 not in (0, 1):
        raise ValueError("z0 must be 0 or 1")
    rng = np.random.default_rng(seed)
    t = start
    z = z0
    switches = []
    while True:
        rate = c.q1 if z == 1 else c.q0
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > T:
            break
        switches.append(t)
        z = 1 - z
    return StateTrajectory(z0, np.asarray(switches), start, T)


def simulate_mmhp(
    h: HawkesParams,
    lam0: float,
    c: CtmcParams,
    T: float,
    seed=None,
    *,
    z0: int | None = None,
    start: float = 0.0,
    history: Sequence[float] = (),
    allow_unstable: bool = False,
) -> tuple[np.ndarray, StateTrajectory]:
    """Markov-modulated Hawkes process on ``(start, T]``.

    The state path is drawn first; events are then thinned segment by segment
    against ``lam0`` (inactive) or the Hawkes intensity ``h`` (active). The
    excitation sum runs over all earlier events, including those fired while
    inactive. ``z0=None`` draws the initial state from the stationary law.
    """
    if lam0 < 0:
        raise ValueError("lam0 must be nonnegative")
    _check_stable(h.alpha, h.beta, allow_unstable)
    rng = np.random.default_rng(seed)
    if z0 is None:
        z0 = int(rng.uniform() < ctmc_stationary(c)[0])
    traj = simulate_ctmc(c, z0, T, rng, start=start)
    S = _excitation_at(h.alpha, h.beta, np.asarray(history, dtype=float), start)
    out = []
    for a, b, z in traj.segments():
        t = a
        while True:
            bound = lam0 if z == 0 else h.baseline + S
            if bound <= 0:
                S *= math.exp(-h.beta * (b - t))
                break
            w = rng.exponential(1.0 / bound)
            if t + w > b:
                S *= math.exp(-h.beta * (b - t))
                break
            t += w
            S *= math.exp(-h.beta * w)
            if z == 0 or rng.uniform() * bound <= h.baseline + S:
                out.append(t)
                S += h.alpha
    return np.asarray(out), traj


def rescaled_times(compensator: Callable[[float, float], float], history) -> list[float]:
    """Compensator over each inter-event interval, the first starting at 0."""
    times = _times(history)
    out = []
    prev = 0.0
    for t in times:
        out.append(float(compensator(prev, float(t))))
        prev = float(t)
    return out
