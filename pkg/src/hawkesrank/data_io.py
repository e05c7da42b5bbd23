"""Event-log ingestion, pair histories, win/loss matrices and text serialization.

Event files are comma-delimited with the header ``cohort,day,time,winner,loser``.
Times are decimal hours on a compressed observation clock: the per-day
observation sessions are laid end to end, so day ``d`` occupies
``(t_{d-1}, t_d]`` and the process never spans an unobserved gap.

Optional ``# key=value`` lines before the header carry dataset metadata
(``n_nodes``, ``horizon``, ``day_boundaries``) so that a written dataset parses
back to an identical object.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

HEADER = ("cohort", "day", "time", "winner", "loser")


class DataError(ValueError):
    """Raised for malformed or inconsistent event data."""


@dataclass(frozen=True, order=False)
class EventRecord:
    cohort: str
    day: int
    time: float
    winner: int
    loser: int

    def __post_init__(self):
        if self.winner == self.loser:
            raise DataError(f"winner and loser are both node {self.winner}")
        if self.day < 1:
            raise DataError(f"day must be a positive integer, got {self.day}")
        if not math.isfinite(self.time) or self.time < 0:
            raise DataError(f"event time must be finite and nonnegative, got {self.time}")


@dataclass(frozen=True)
class EventDataset:
    """All win events of one cohort on a continuous compressed clock.

    ``day_boundaries[d-1]`` is the end of day ``d`` (so the last entry equals
    ``horizon``). Events are held sorted by time with strictly increasing
    timestamps.
    """

    n_nodes: int
    horizon: float
    day_boundaries: tuple[float, ...]
    events: tuple[EventRecord, ...]
    cohort: str = ""

    def __post_init__(self):
        if self.n_nodes < 1:
            raise DataError("n_nodes must be positive")
        b = self.day_boundaries
        if len(b) == 0:
            raise DataError("at least one day boundary is required")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])) or b[0] <= 0:
            raise DataError("day boundaries must be positive and strictly increasing")
        if b[-1] != self.horizon:
            raise DataError(f"last day boundary {b[-1]!r} must equal horizon {self.horizon!r}")
        prev = -math.inf
        for ev in self.events:
            if not (1 <= ev.winner <= self.n_nodes and 1 <= ev.loser <= self.n_nodes):
                raise DataError(f"node id outside 1..{self.n_nodes}: {ev}")
            if ev.time > self.horizon:
                raise DataError(f"event time {ev.time} beyond horizon {self.horizon}")
            if ev.time <= prev:
                raise DataError("events must have strictly increasing times")
            prev = ev.time
            if ev.day > len(b):
                raise DataError(f"day {ev.day} beyond the {len(b)} declared days")
            lo = 0.0 if ev.day == 1 else b[ev.day - 2]
            if not (lo < ev.time <= b[ev.day - 1] or (ev.day == 1 and ev.time == 0.0)):
                raise DataError(f"event at t={ev.time} is not inside day {ev.day} ({lo}, {b[ev.day - 1]}]")

    @property
    def n_days(self) -> int:
        return len(self.day_boundaries)

    def day_end(self, d: int) -> float:
        """End time of day ``d``; ``day_end(0)`` is 0."""
        if d == 0:
            return 0.0
        if not 1 <= d <= self.n_days:
            raise DataError(f"day {d} outside 1..{self.n_days}")
        return self.day_boundaries[d - 1]

    def truncate_days(self, d: int) -> "EventDataset":
        """Dataset restricted to the first ``d`` days."""
        t = self.day_end(d)
        return EventDataset(
            n_nodes=self.n_nodes,
            horizon=t,
            day_boundaries=self.day_boundaries[:d],
            events=tuple(ev for ev in self.events if ev.time <= t),
            cohort=self.cohort,
        )

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(times, winners, losers) as arrays."""
        times = np.array([ev.time for ev in self.events], dtype=float)
        w = np.array([ev.winner for ev in self.events], dtype=np.int64)
        l_ = np.array([ev.loser for ev in self.events], dtype=np.int64)
        return times, w, l_


@dataclass(frozen=True)
class PairHistory:
    sender: int
    receiver: int
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class WinLossMatrix:
    counts: np.ndarray
    window: tuple[float, float]

    @property
    def n_nodes(self) -> int:
        return self.counts.shape[0]


def _break_ties(times: list[float], caps: list[float]) -> list[float]:
    # push ties forward one ulp, then pull back anything pushed past its cap
    # (the end of its day) while keeping the order strict
    out = []
    prev = -math.inf
    for t in times:
        if t <= prev:
            t = float(np.nextafter(prev, math.inf))
        out.append(t)
        prev = t
    nxt = math.inf
    for k in range(len(out) - 1, -1, -1):
        out[k] = min(out[k], caps[k], float(np.nextafter(nxt, -math.inf)))
        nxt = out[k]
    return out


def make_dataset(
    records: Iterable[EventRecord],
    n_nodes: int | None = None,
    horizon: float | None = None,
    day_boundaries: Sequence[float] | None = None,
    cohort: str | None = None,
) -> EventDataset:
    """Validate and assemble records into an :class:`EventDataset`.

    Records are stably sorted by time; equal timestamps are spread one ulp
    apart in input order, forward unless that would leave the record's day. Missing day boundaries are inferred as the last
    event time of each day (the final one replaced by the horizon).
    """
    recs = sorted(records, key=lambda r: r.time)
    for a, b in zip(recs, recs[1:]):
        if b.day < a.day:
            raise DataError(f"day/time ordering is not monotone: {a} then {b}")
    caps = [math.inf] * len(recs)
    if day_boundaries is not None:
        caps = [day_boundaries[r.day - 1] if 1 <= r.day <= len(day_boundaries) else math.inf for r in recs]
    elif horizon is not None:
        caps = [float(horizon)] * len(recs)
    times = _break_ties([r.time for r in recs], caps)
    recs = [EventRecord(r.cohort, r.day, t, r.winner, r.loser) for r, t in zip(recs, times)]

    if n_nodes is None:
        if not recs:
            raise DataError("no events and no n_nodes given: node set is undetermined")
        n_nodes = max(max(r.winner, r.loser) for r in recs)
    last_t = recs[-1].time if recs else 0.0
    if day_boundaries is None:
        if not recs:
            if horizon is None:
                raise DataError("no events, no horizon and no day boundaries")
            day_boundaries = [float(horizon)]
        else:
            n_days = max(r.day for r in recs)
            ends: dict[int, float] = {}
            for r in recs:
                ends[r.day] = r.time
            missing = [d for d in range(1, n_days) if d not in ends]
            if missing:
                raise DataError(f"cannot infer boundaries for days without events: {missing}")
            day_boundaries = [ends[d] for d in range(1, n_days)]
            day_boundaries.append(float(horizon) if horizon is not None else ends[n_days])
    day_boundaries = tuple(float(b) for b in day_boundaries)
    if horizon is None:
        horizon = day_boundaries[-1]
    if last_t > horizon:
        raise DataError(f"event time {last_t} beyond declared horizon {horizon}")
    if cohort is None:
        cohort = recs[0].cohort if recs else ""
    return EventDataset(int(n_nodes), float(horizon), day_boundaries, tuple(recs), cohort)


def _parse_meta(line: str, meta: dict) -> None:
    body = line.lstrip("#").strip()
    if "=" not in body:
        return
    key, value = (s.strip() for s in body.split("=", 1))
    meta[key] = value


def parse_events(
    path: str | Path | io.TextIOBase,
    *,
    n_nodes: int | None = None,
    horizon: float | None = None,
    day_boundaries: Sequence[float] | None = None,
    columns: Sequence[str] = HEADER,
) -> EventDataset:
    """Read an event log into a validated :class:`EventDataset`.

    ``columns`` maps the file's header names onto
    (cohort, day, time, winner, loser), in that order. Explicit keyword
    arguments override ``# key=value`` metadata in the file.
    """
    if isinstance(path, (str, Path)):
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
    else:
        lines = path.read().splitlines()

    meta: dict[str, str] = {}
    i = 0
    while i < len(lines) and (lines[i].startswith("#") or not lines[i].strip()):
        _parse_meta(lines[i], meta)
        i += 1
    if i == len(lines):
        raise DataError("missing header row")
    header = [h.strip() for h in next(csv.reader([lines[i]]))]
    try:
        idx = [header.index(c) for c in columns]
    except ValueError:
        raise DataError(f"line {i + 1}: header {header} lacks columns {list(columns)}") from None

    records = []
    for lineno, row in enumerate(csv.reader(lines[i + 1:]), start=i + 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            cohort, day, t, w, l_ = (row[k].strip() for k in idx)
            rec = EventRecord(cohort, int(day), float(t), int(w), int(l_))
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise DataError(f"line {lineno}: malformed row {row!r} ({exc})") from None
        if horizon is not None and rec.time > horizon:
            raise DataError(f"line {lineno}: time {rec.time} outside horizon [0, {horizon}]")
        records.append(rec)

    if n_nodes is None and "n_nodes" in meta:
        n_nodes = int(meta["n_nodes"])
    if horizon is None and "horizon" in meta:
        horizon = float(meta["horizon"])
    if day_boundaries is None and meta.get("day_boundaries"):
        day_boundaries = [float(x) for x in meta["day_boundaries"].split(";")]
    if n_nodes is not None:
        for r in records:
            if max(r.winner, r.loser) > n_nodes or min(r.winner, r.loser) < 1:
                raise DataError(f"event {r} references a node outside 1..{n_nodes}")
    return make_dataset(records, n_nodes, horizon, day_boundaries, meta.get("cohort"))


def write_events(ds: EventDataset, path: str | Path) -> None:
    """Write ``ds`` with its metadata; floats use ``repr`` so parsing is exact."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# cohort={ds.cohort}\n")
        fh.write(f"# n_nodes={ds.n_nodes}\n")
        fh.write(f"# horizon={ds.horizon!r}\n")
        fh.write("# day_boundaries=" + ";".join(repr(b) for b in ds.day_boundaries) + "\n")
        fh.write(",".join(HEADER) + "\n")
        for ev in ds.events:
            fh.write(f"{ev.cohort},{ev.day},{ev.time!r},{ev.winner},{ev.loser}\n")


def compress_sessions(
    days: Sequence[int],
    session_times: Sequence[float],
    session_hours: Sequence[float],
    compress: bool = True,
    day_starts: Sequence[float] | None = None,
) -> tuple[np.ndarray, tuple[float, ...]]:
    """Map per-day session times onto one clock.

    With ``compress=True`` day ``d`` starts where day ``d-1``'s session ended,
    so unobserved gaps vanish. With ``compress=False`` the absolute
    ``day_starts`` (hours from the first session) are kept and boundaries are
    the session ends on that clock.
    """
    lengths = np.asarray(session_hours, dtype=float)
    if compress:
        starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    else:
        if day_starts is None:
            raise DataError("day_starts is required when compress=False")
        starts = np.asarray(day_starts, dtype=float)
    ends = starts + lengths
    d = np.asarray(days, dtype=int)
    t = np.asarray(session_times, dtype=float)
    if np.any(t < 0) or np.any(t > lengths[d - 1]):
        raise DataError("session time outside its day's session length")
    return starts[d - 1] + t, tuple(float(e) for e in ends)


def build_pair_histories(ds: EventDataset) -> dict[tuple[int, int], PairHistory]:
    """Partition events into the N(N-1) directed pair histories (1-based ids)."""
    buckets: dict[tuple[int, int], list[float]] = defaultdict(list)
    for ev in ds.events:
        buckets[(ev.winner, ev.loser)].append(ev.time)
    n = ds.n_nodes
    return {
        (i, j): PairHistory(i, j, np.asarray(buckets.get((i, j), []), dtype=float))
        for i in range(1, n + 1)
        for j in range(1, n + 1)
        if i != j
    }


def winloss_matrix(ds: EventDataset, window: tuple[float, float] | None = None) -> WinLossMatrix:
    """Count wins i->j with time in ``(t_a, t_b]``.

    The default window is the whole horizon; a window starting at 0 also
    includes events stamped exactly 0.
    """
    if window is None:
        window = (0.0, ds.horizon)
    ta, tb = float(window[0]), float(window[1])
    if not ta < tb or tb > ds.horizon or ta < 0:
        raise DataError(f"invalid window ({ta}, {tb}] for horizon {ds.horizon}")
    W = np.zeros((ds.n_nodes, ds.n_nodes), dtype=np.int64)
    for ev in ds.events:
        if ta < ev.time <= tb or (ta == 0.0 and ev.time == 0.0):
            W[ev.winner - 1, ev.loser - 1] += 1
    return WinLossMatrix(W, (ta, tb))


def write_matrix(M: np.ndarray, path: str | Path, fmt=repr) -> None:
    """Row-major matrix with a node-id header row and column."""
    n = M.shape[0]
    with open(path, "w", newline="") as fh:
        fh.write("node," + ",".join(str(j) for j in range(1, n + 1)) + "\n")
        for i in range(n):
            fh.write(f"{i + 1}," + ",".join(fmt(x.item()) for x in M[i]) + "\n")


def read_matrix(path: str | Path, dtype=float) -> np.ndarray:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return np.array([[dtype(x) for x in r[1:]] for r in rows[1:]], dtype=dtype)


def write_triples(M: np.ndarray, path: str | Path, skip_diagonal: bool = True) -> None:
    """(row, col, value) triples keyed by 1-based node id; NaN marks undefined."""
    n = M.shape[0]
    with open(path, "w", newline="") as fh:
        fh.write("row,col,value\n")
        for i in range(n):
            for j in range(M.shape[1]):
                if skip_diagonal and i == j:
                    continue
                fh.write(f"{i + 1},{j + 1},{float(M[i, j])!r}\n")
