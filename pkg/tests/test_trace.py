import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_ibp import EngineConfig, HybridEngine, generate_cambridge
from hybrid_ibp.trace import (HEADER, TraceFormatError, TraceRecord, TraceWriter, read_meta,
                              read_trace, write_trace)


def _records(n, rng):
    out = []
    wall = 0.0
    for i in range(1, n + 1):
        wall += float(rng.integers(0, 5000)) / 1e6
        out.append(TraceRecord(iter=i, wall_s=round(wall, 6), k_plus=int(rng.integers(0, 9)),
                               alpha=float(rng.gamma(2.0)), sigma_x=float(rng.random()),
                               sigma_a=float(rng.random() + 0.5),
                               train_joint_ll=float(-1e4 * rng.random()),
                               heldout_joint_ll=math.nan if i % 7 == 0 else float(-rng.random()),
                               p_prime=int(rng.integers(0, 5))))
    return out


def _same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        for u, v in zip(x.__dict__.values(), y.__dict__.values()):
            assert u == v or (math.isnan(u) and math.isnan(v))


def test_round_trip_1000_records(tmp_path, rng):
    recs = _records(1000, rng)
    write_trace(tmp_path / "t.csv", recs, meta={"algo": "hybrid"})
    _same(read_trace(tmp_path / "t.csv"), recs)
    assert read_meta(tmp_path / "t.csv") == {"algo": "hybrid"}


def test_empty_run_is_header_only(tmp_path):
    write_trace(tmp_path / "t.csv", [])
    assert (tmp_path / "t.csv").read_text() == ",".join(HEADER) + "\n"
    assert read_trace(tmp_path / "t.csv") == []


def test_malformed_line_reports_line_number(tmp_path, rng):
    path = tmp_path / "t.csv"
    write_trace(path, _records(3, rng))
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace(",", ";", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TraceFormatError, match=r"t\.csv:3:"):
        read_trace(path)


def test_bad_header_and_non_numeric(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n")
    with pytest.raises(TraceFormatError, match=":1:"):
        read_trace(path)
    path.write_text(",".join(HEADER) + "\n1,0.1,x,1,1,1,1,1,0\n")
    with pytest.raises(TraceFormatError, match=":2:"):
        read_trace(path)


def test_writer_enforces_ordering(tmp_path, rng):
    a, b = _records(2, rng)
    with TraceWriter(tmp_path / "t.csv") as w:
        w.write(b)
        with pytest.raises(ValueError):
            w.write(a)


def test_writer_is_append_only_and_flushed(tmp_path, rng):
    recs = _records(3, rng)
    with TraceWriter(tmp_path / "t.csv") as w:
        w.write(recs[0])
        assert len(read_trace(tmp_path / "t.csv")) == 1
        w.write(recs[1])
        assert len(read_trace(tmp_path / "t.csv")) == 2


def test_fields_match_live_state_at_iteration_one(tmp_path):
    ds = generate_cambridge(60, noise=0.5, seed=3)
    with HybridEngine(ds.X_train, EngineConfig(processors=2, sub_iterations=2, seed=9),
                      X_test=ds.X_test) as engine:
        with TraceWriter(tmp_path / "t.csv") as w:
            rec = engine.step()
            w.write(rec)
        m = engine.master
        live = (1, m.k_plus, m.hyper.alpha, m.hyper.sigma_x, m.hyper.sigma_a,
                m.train_joint_ll, m.p_prime)
    got = read_trace(tmp_path / "t.csv")[0]
    assert (got.iter, got.k_plus, got.alpha, got.sigma_x, got.sigma_a, got.train_joint_ll,
            got.p_prime) == live
    assert np.isfinite(got.heldout_joint_ll)
    assert got.wall_s == rec.wall_s


_finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 10**6), _finite, _finite,
                          st.floats(allow_infinity=True, allow_nan=True), st.integers(0, 9)),
                max_size=20))
def test_round_trip_property(tmp_path_factory, rows):
    recs, it, wall = [], 0, 0
    for step, dt, train, alpha, held, p in rows:
        it += step + 1
        wall += dt
        recs.append(TraceRecord(it, wall / 1e6, step, alpha, 0.5, 1.0, train, held, p))
    path = tmp_path_factory.mktemp("prop") / "t.csv"
    write_trace(path, recs)
    _same(read_trace(path), recs)
