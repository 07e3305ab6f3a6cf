from __future__ import annotations

import io
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irpsim.errors import FormatError
from irpsim.trace import (
    FileCensus,
    FileInfo,
    IrpEvent,
    OpKind,
    Trace,
    load_census,
    load_trace,
    save_census,
    save_trace,
    shannon_entropy,
    validate_trace,
)

from conftest import ev, make_census


class TestShannonEntropy:
    def test_constant_payload_is_zero(self):
        hist = [0] * 256
        hist[0] = 4096
        assert shannon_entropy(hist) == 0.0

    def test_uniform_histogram_is_one(self):
        assert shannon_entropy([7] * 256) == 1.0

    def test_two_equiprobable_symbols(self):
        hist = [0] * 256
        hist[ord("a")] = 2048
        hist[ord("b")] = 2048
        assert math.isclose(shannon_entropy(hist), 0.125)

    def test_empty_payload_rejected(self):
        with pytest.raises(ValueError, match="empty payload"):
            shannon_entropy([0] * 256)

    def test_wrong_bin_count_rejected(self):
        with pytest.raises(ValueError, match="256"):
            shannon_entropy([1, 2, 3])

    @given(st.lists(st.integers(min_value=0, max_value=10_000), min_size=256, max_size=256))
    @settings(max_examples=200)
    def test_bounds(self, hist):
        if sum(hist) == 0:
            hist[0] = 1
        h = shannon_entropy(hist)
        assert 0.0 <= h <= 1.0


def _events_strategy():
    def build(ts, pid, op_i, fid, payload, dummy):
        op = list(OpKind)[op_i]
        kw = {}
        if op in (OpKind.RD, OpKind.WT):
            entropy = payload / 100.0
            if dummy and op is OpKind.WT:
                entropy = min(entropy, 0.05)
            kw = dict(offset=payload, length=1 + payload, entropy=entropy,
                      is_dummy=dummy)
        return IrpEvent(ts_us=ts, pid=pid, op=op, file_id=fid, dir_id=0, **kw)

    return st.builds(
        build,
        st.integers(min_value=0, max_value=10**7),
        st.integers(min_value=0, max_value=3),
        st.integers(min_value=0, max_value=len(OpKind) - 1),
        st.integers(min_value=0, max_value=5),
        st.integers(min_value=0, max_value=100),
        st.booleans(),
    )


class TestSerialization:
    def test_empty_stream_loads_as_empty_trace(self):
        t = load_trace(io.StringIO(""))
        assert len(t) == 0 and t.label == "benign"

    def test_sorting_is_applied_on_load(self):
        lines = [
            '{"ts_us": 30, "pid": 0, "op": "OP", "file_id": 1, "dir_id": 0}',
            '{"ts_us": 10, "pid": 0, "op": "CL", "file_id": 1, "dir_id": 0}',
            '{"ts_us": 20, "pid": 0, "op": "DL", "file_id": 0, "dir_id": 0}',
        ]
        t = load_trace(io.StringIO("\n".join(lines)))
        assert [e.ts_us for e in t.events] == [10, 20, 30]

    def test_unknown_op_names_line(self):
        with pytest.raises(FormatError, match="line 1"):
            load_trace(io.StringIO('{"ts_us": 0, "pid": 0, "op": "XX", "file_id": 0, "dir_id": 0}'))

    def test_entropy_out_of_range_rejected(self):
        line = '{"ts_us":0,"pid":0,"op":"WT","file_id":1,"dir_id":0,"offset":0,"length":4,"entropy":1.3}'
        with pytest.raises(FormatError, match="entropy"):
            load_trace(io.StringIO(line))

    def test_bad_version_rejected(self):
        with pytest.raises(FormatError, match="version"):
            load_trace(io.StringIO('{"v": 99}'))

    def test_zero_event_trace_emits_no_event_records(self):
        buf = io.StringIO()
        save_trace(Trace((), "benign"), buf)
        lines = [l for l in buf.getvalue().splitlines() if l]
        assert len(lines) == 1 and '"v": 1' in lines[0]

    def test_roundtrip_label_and_dummy_flag(self):
        t = Trace.from_events(
            [ev(0, OpKind.WT, 1, entropy=0.04, is_dummy=True), ev(5, OpKind.DL)],
            "ransomware",
        )
        buf = io.StringIO()
        save_trace(t, buf)
        buf.seek(0)
        t2 = load_trace(buf)
        assert t2 == t
        assert t2.events[0].is_dummy is True

    @given(st.lists(_events_strategy(), max_size=40),
           st.sampled_from(["benign", "ransomware"]))
    @settings(max_examples=100)
    def test_roundtrip_property(self, events, label):
        t = Trace.from_events(events, label)
        buf = io.StringIO()
        save_trace(t, buf)
        buf.seek(0)
        assert load_trace(buf) == t

    def test_stable_sort_keeps_tie_order(self):
        a = ev(100, OpKind.OP, 1)
        b = ev(100, OpKind.CL, 2)
        t = Trace.from_events([a, b])
        assert t.events == (a, b)


class TestCensusIO:
    def test_roundtrip(self):
        census = make_census(5)
        buf = io.StringIO()
        save_census(census, buf)
        buf.seek(0)
        loaded = load_census(buf)
        assert loaded.files == census.files
        assert loaded.dirs == census.dirs
        assert loaded.totals == census.totals

    def test_totals_recomputed(self):
        census = make_census(4, exts=(".a", ".b"))
        assert census.totals == {".a": 2, ".b": 2}

    def test_unrooted_tree_rejected(self):
        with pytest.raises(ValueError, match="root"):
            FileCensus(files={1: FileInfo(".a", 1, 0)}, dirs={1: 1})


class TestValidateTrace:
    def test_unknown_file_id(self, census10):
        t = Trace.from_events([ev(0, OpKind.OP, fid=999)])
        violations = validate_trace(t, census10)
        assert any("unknown file_id" in v for v in violations)

    def test_entropy_out_of_range(self, census10):
        bad = IrpEvent(ts_us=0, pid=0, op=OpKind.WT, file_id=1, dir_id=0,
                       offset=0, length=4, entropy=1.3)
        violations = validate_trace(Trace((bad,)), census10)
        assert any("entropy out of range" in v for v in violations)

    def test_clean_trace(self, census10, rw_trace):
        assert validate_trace(rw_trace, census10) == []

    def test_dummy_write_entropy_capped(self, census10):
        bad = IrpEvent(ts_us=0, pid=0, op=OpKind.WT, file_id=1, dir_id=0,
                       offset=0, length=4, entropy=0.5, is_dummy=True)
        violations = validate_trace(Trace((bad,)), census10)
        assert any("dummy write entropy" in v for v in violations)

    def test_payload_fields_on_non_data_op(self, census10):
        bad = IrpEvent(ts_us=0, pid=0, op=OpKind.OP, file_id=1, dir_id=0, length=4)
        violations = validate_trace(Trace((bad,)), census10)
        assert any("payload" in v for v in violations)
