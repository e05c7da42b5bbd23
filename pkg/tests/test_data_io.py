import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hawkesrank.data_io import (
    DataError,
    EventRecord,
    build_pair_histories,
    compress_sessions,
    make_dataset,
    parse_events,
    read_matrix,
    winloss_matrix,
    write_events,
    write_matrix,
)

CSV3 = """cohort,day,time,winner,loser
c1,1,0.5,1,2
c1,1,1.0,1,2
c1,2,2.5,2,1
"""


def test_parse_three_rows_two_nodes():
    ds = parse_events(io.StringIO(CSV3))
    assert ds.n_nodes == 2
    assert len(ds.events) == 3
    assert ds.day_boundaries == (1.0, 2.5)


def test_parse_empty_body_needs_nodes():
    with pytest.raises(DataError):
        parse_events(io.StringIO("cohort,day,time,winner,loser\n"))
    ds = parse_events(io.StringIO("cohort,day,time,winner,loser\n"), n_nodes=4, horizon=3.0)
    assert ds.n_nodes == 4 and len(ds.events) == 0


def test_parse_self_win_names_line():
    text = CSV3 + "c1,2,3.0,2,2\n"
    with pytest.raises(DataError, match="line 5"):
        parse_events(io.StringIO(text))


def test_parse_malformed_and_horizon():
    with pytest.raises(DataError, match="line 3"):
        parse_events(io.StringIO("cohort,day,time,winner,loser\nc,1,0.1,1,2\nc,1,abc,1,2\n"))
    with pytest.raises(DataError, match="horizon"):
        parse_events(io.StringIO(CSV3), horizon=2.0)


def test_parse_rejects_non_monotone_days():
    text = "cohort,day,time,winner,loser\nc,2,0.5,1,2\nc,1,1.0,2,1\n"
    with pytest.raises(DataError, match="monotone"):
        parse_events(io.StringIO(text))


def test_parse_custom_columns_and_metadata():
    text = "# n_nodes=3\n# horizon=4.0\n# day_boundaries=2.0;4.0\nt,d,w,l,g\n0.5,1,1,2,x\n3.0,2,3,1,x\n"
    ds = parse_events(io.StringIO(text), columns=("g", "d", "t", "w", "l"))
    assert ds.n_nodes == 3 and ds.horizon == 4.0 and ds.day_boundaries == (2.0, 4.0)


def test_ties_broken_in_input_order():
    recs = [EventRecord("c", 1, 1.0, 1, 2), EventRecord("c", 1, 1.0, 2, 1), EventRecord("c", 1, 1.0, 1, 2)]
    ds = make_dataset(recs, n_nodes=2, horizon=2.0)
    t = [e.time for e in ds.events]
    assert t[0] == 1.0 and t[1] == np.nextafter(1.0, 2) and t[2] == np.nextafter(t[1], 2)
    assert [e.winner for e in ds.events] == [1, 2, 1]


def test_ties_at_day_end_spread_backward():
    recs = [EventRecord("c", 1, 5.0, 1, 2), EventRecord("c", 1, 5.0, 2, 1), EventRecord("c", 2, 6.0, 1, 2)]
    ds = make_dataset(recs, n_nodes=2, horizon=10.0, day_boundaries=[5.0, 10.0])
    t = [e.time for e in ds.events]
    assert t[0] == np.nextafter(5.0, 0) and t[1] == 5.0 and t[2] == 6.0
    assert [e.winner for e in ds.events] == [1, 2, 1]
    at_horizon = [EventRecord("c", 1, 2.0, 1, 2)] * 2
    assert make_dataset(at_horizon, n_nodes=2, horizon=2.0).events[-1].time == 2.0


def test_pair_histories_examples():
    ds = make_dataset([EventRecord("c", 1, 1.0, 1, 2), EventRecord("c", 1, 2.0, 2, 1)], n_nodes=2, horizon=3.0)
    h = build_pair_histories(ds)
    assert h[(1, 2)].times.tolist() == [1.0] and h[(2, 1)].times.tolist() == [2.0]
    empty = make_dataset([], n_nodes=3, horizon=1.0)
    hs = build_pair_histories(empty)
    assert len(hs) == 6 and all(len(v) == 0 for v in hs.values())
    ds3 = make_dataset([EventRecord("c", 1, t, 1, 2) for t in (0.2, 0.4, 0.6)], n_nodes=3, horizon=1.0)
    h3 = build_pair_histories(ds3)
    assert len(h3[(1, 2)]) == 3 and sum(len(v) for v in h3.values()) == 3


def test_winloss_window_examples():
    ds = parse_events(io.StringIO(CSV3))
    W = winloss_matrix(ds).counts
    assert W[0, 1] == 2 and W[1, 0] == 1 and W.sum() == 3
    assert winloss_matrix(ds, (1.0, 2.0)).counts.sum() == 0
    with pytest.raises(DataError):
        winloss_matrix(ds, (2.0, 1.0))


def test_compress_sessions():
    t, ends = compress_sessions([1, 1, 2, 3], [0.5, 1.5, 0.2, 2.9], [2.0, 1.0, 3.0])
    assert ends == (2.0, 3.0, 6.0)
    assert t.tolist() == [0.5, 1.5, 2.2, 5.9]
    t2, ends2 = compress_sessions([2], [0.5], [2.0, 1.0], compress=False, day_starts=[0.0, 24.0])
    assert t2.tolist() == [24.5] and ends2 == (2.0, 25.0)


def test_matrix_roundtrip(tmp_path):
    M = np.array([[0.0, 1.25, 3.0], [0.1, 0.0, 1e-17], [2.0, 5.0, 0.0]])
    write_matrix(M, tmp_path / "m.csv")
    assert np.array_equal(read_matrix(tmp_path / "m.csv"), M)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "node,1,2,3"


event_lists = st.lists(
    st.tuples(st.floats(0.0, 10.0, allow_nan=False), st.integers(1, 4), st.integers(1, 4)).filter(
        lambda r: r[1] != r[2]),
    max_size=40,
)


def _dataset(rows):
    recs = [EventRecord("c", 1 if t <= 5.0 else 2, t, w, l_) for t, w, l_ in rows]
    return make_dataset(recs, n_nodes=4, horizon=10.5, day_boundaries=[5.0, 10.5])


@given(event_lists)
def test_partition_and_roundtrip(tmp_path_factory, rows):
    ds = _dataset(rows)
    hs = build_pair_histories(ds)
    assert sum(len(h) for h in hs.values()) == len(ds.events)
    assert all(np.all(np.diff(h.times) > 0) for h in hs.values())
    path = tmp_path_factory.mktemp("rt") / "ev.csv"
    write_events(ds, path)
    assert parse_events(path) == ds


@given(event_lists, st.floats(0.5, 10.0))
def test_window_additivity(rows, cut):
    ds = _dataset(rows)
    full = winloss_matrix(ds, (0.0, ds.horizon)).counts
    a = winloss_matrix(ds, (0.0, cut)).counts
    b = winloss_matrix(ds, (cut, ds.horizon)).counts
    assert np.array_equal(a + b, full)
    assert np.all(np.diag(full) == 0) and full.sum() == len(ds.events)
