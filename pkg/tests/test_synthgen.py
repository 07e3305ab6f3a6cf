from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest

from irpsim.synthgen import (
    BENIGN_CLASSES,
    GenConfig,
    gen_benign_trace,
    gen_census,
    gen_ransomware,
    load_config,
    save_config,
)
from irpsim.trace import OpKind, validate_trace

CFG = GenConfig(n_files=600, n_dirs=40, n_benign=300, n_ransomware=3, seed=11)


@pytest.fixture(scope="module")
def census():
    return gen_census(CFG)


@pytest.fixture(scope="module")
def benign(census):
    return [gen_benign_trace(census, CFG, i) for i in range(CFG.n_benign)]


@pytest.fixture(scope="module")
def ransomware(census):
    return gen_ransomware(census, CFG, 0)


class TestGenCensus:
    def test_requested_totals(self, census):
        assert census.n_files == 600
        assert len(census.dirs) == 40
        assert sum(census.totals.values()) == 600

    def test_deterministic(self, census):
        again = gen_census(CFG)
        assert again.files == census.files
        assert again.dirs == census.dirs

    def test_single_extension_mix(self):
        cfg = GenConfig(n_files=50, n_dirs=5, ext_mix={".docx": 1.0}, seed=1)
        census = gen_census(cfg)
        assert census.totals == {".docx": 50}

    def test_size_median_scale(self, census):
        sizes = sorted(i.size for i in census.files.values())
        median = sizes[len(sizes) // 2]
        assert 65536 / 3 < median < 65536 * 3


def _main_counts(trace):
    counts = Counter(e.op for e in trace.events)
    return {op: counts.get(op, 0) for op in (OpKind.DL, OpKind.RD, OpKind.WT, OpKind.RN)}


class TestGenBenign:
    def test_all_traces_validate(self, census, benign):
        for t in benign[:50]:
            assert validate_trace(t, census) == []

    def test_deterministic_per_index(self, census, benign):
        again = gen_benign_trace(census, CFG, 17)
        assert again == benign[17]

    def test_class_shares_match_mix(self, census, benign):
        by_class = Counter()
        for t in benign:
            counts = _main_counts(t)
            ops = ",".join(op.value for op in (OpKind.DL, OpKind.RD, OpKind.WT, OpKind.RN)
                           if counts[op])
            by_class[ops] += 1
        for cls in BENIGN_CLASSES:
            if cls["prevalence"] < 3.0:
                continue
            share = 100.0 * by_class[cls["ops"]] / len(benign)
            assert abs(share - cls["prevalence"]) < 5.0

    def test_flagship_class_ratio(self, census, benign):
        # mean DL:RD:WT:RN over the class should sit near 1:16:13:1
        sums = np.zeros(4)
        n = 0
        for t in benign:
            counts = _main_counts(t)
            if all(counts[op] for op in counts):
                sums += np.array([counts[op] for op in counts], dtype=float)
                n += 1
        assert n > 10
        mean = sums / n
        normalized = mean / mean[0]
        for got, want in zip(normalized, (1.0, 16.0, 13.0, 1.0)):
            assert abs(got - want) / want < 0.15

    def test_single_trace_ratio_within_tolerance(self, census):
        # a seeded trace of the four-op class with a healthy op volume
        for i in range(200):
            t = gen_benign_trace(census, CFG, i)
            counts = _main_counts(t)
            if all(counts.values()) and sum(counts.values()) > 2000:
                vec = np.array([counts[op] for op in counts], dtype=float)
                normalized = vec / vec[0]
                assert max(
                    abs(g - w) / w for g, w in zip(normalized, (1, 16, 13, 1))
                ) < 0.15
                return
        pytest.fail("no large four-op trace in the sample")

    def test_coverage_stays_small(self, census, benign):
        for t in benign:
            assert len(t.distinct_file_ids()) / census.n_files < 0.02

    def test_read_only_class_emits_reads_and_brackets_only(self, census, benign):
        for t in benign:
            counts = _main_counts(t)
            if counts[OpKind.RD] and not (counts[OpKind.DL] or counts[OpKind.WT] or counts[OpKind.RN]):
                kinds = {e.op for e in t.events}
                assert kinds <= {OpKind.RD, OpKind.OP, OpKind.CL, OpKind.FRD,
                                 OpKind.FOP, OpKind.FCL}
                return
        pytest.fail("no read-only trace in the sample")

    def test_open_close_bracket_counts(self, census, benign):
        t = benign[0]
        counts = Counter(e.op for e in t.events)
        distinct = len(t.distinct_file_ids())
        assert counts[OpKind.OP] == distinct
        assert counts[OpKind.CL] == distinct

    def test_fast_share(self, census, benign):
        rd = sum(1 for t in benign for e in t.events if e.op is OpKind.RD)
        frd = sum(1 for t in benign for e in t.events if e.op is OpKind.FRD)
        assert abs(frd / rd - 0.3) < 0.05


class TestGenRansomware:
    def test_full_type_coverage(self, census, ransomware):
        touched = Counter()
        for fid in ransomware.distinct_file_ids():
            touched[census.files[fid].ext] += 1
        assert touched == Counter(census.totals)

    def test_mean_write_entropy(self, census):
        for i in range(CFG.n_ransomware):
            t = gen_ransomware(census, CFG, i)
            wt = [e.entropy for e in t.events if e.op is OpKind.WT]
            assert abs(sum(wt) / len(wt) - 0.88) <= 0.03

    def test_full_overwrite_per_file(self, census, ransomware):
        written: dict[int, int] = {}
        for e in ransomware.events:
            if e.op is OpKind.WT:
                written[e.file_id] = written.get(e.file_id, 0) + e.length
        for fid, total in written.items():
            assert total >= census.files[fid].size

    def test_one_listing_per_directory(self, census, ransomware):
        listed = [e.dir_id for e in ransomware.events if e.op is OpKind.DL]
        assert sorted(listed) == sorted(census.dirs)
        assert len(set(listed)) == len(listed)

    def test_magic_bytes_changed(self, census, ransomware):
        zero_offset_writes = [e for e in ransomware.events
                              if e.op is OpKind.WT and e.offset == 0]
        assert zero_offset_writes
        assert all(not e.preserves_magic for e in zero_offset_writes)

    def test_validates_and_deterministic(self, census, ransomware):
        assert validate_trace(ransomware, census) == []
        assert gen_ransomware(census, CFG, 0) == ransomware

    def test_dense_timestamps(self, census, ransomware):
        span_s = (ransomware.events[-1].ts_us - ransomware.events[0].ts_us) / 1e6
        rate = len(ransomware.events) / max(span_s, 1e-9)
        assert rate > 500


class TestConfigIO:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "config.json"
        save_config(CFG, path)
        assert load_config(path) == CFG

    def test_bad_mix_rejected(self):
        with pytest.raises(ValueError):
            GenConfig(ext_mix={".a": 0.5})

    def test_file_dir_ordering_enforced(self):
        with pytest.raises(ValueError):
            GenConfig(n_files=5, n_dirs=10)
