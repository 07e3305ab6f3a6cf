from __future__ import annotations

import math

import numpy as np
import pytest

from irpsim.detectors import (
    DetectionPolicy,
    FeatureVector8,
    Metrics,
    TickSchedule,
    TieredDetector,
    TierSpec,
    Verdict,
    WindowedDetector,
    _first_k_run,
    build_training_set,
    build_window_training_set,
    evaluate,
    extract_features6,
    load_bundle,
    locate_ticks,
    save_tiered_bundle,
    save_windowed_bundle,
    split_train_test,
    tick_schedule,
    tiered_detect,
    windowed_detect,
    windowed_features,
)
from irpsim.errors import DataError
from irpsim.forest import Forest, ForestParams, Leaf, Split
from irpsim.trace import FileCensus, FileInfo, IrpEvent, OpKind, Trace

from conftest import ev, make_census


def const_forest(prob: float, arity: int = 6) -> Forest:
    names = tuple(f"f{i}" for i in range(arity))
    return Forest([Leaf(prob)], ForestParams(), names, 0)


def dl_forest() -> Forest:
    """Flags an interval iff it contains at least one directory listing."""
    tree = Split(feature_index=0, threshold=0.5, left=Leaf(0.0), right=Leaf(1.0))
    return Forest([tree], ForestParams(), ("f0",) * 6, 0)


class TestTickSchedule:
    def test_first_and_last_fractions(self):
        s = tick_schedule()
        assert s.fractions[0] == 0.001
        assert s.fractions[-1] == 1.0
        assert len(s) == 28

    def test_constant_geometric_ratio(self):
        s = tick_schedule()
        expected = 1000 ** (1 / 27)
        for a, b in zip(s.fractions, s.fractions[1:]):
            assert b / a == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(1.2915, abs=5e-5)

    def test_fractions_must_increase(self):
        with pytest.raises(ValueError):
            TickSchedule((0.001, 0.001, 1.0))


def _touch_trace(n_files: int, dl_before: set[int] = frozenset()) -> Trace:
    events = []
    ts = 0
    for k in range(1, n_files + 1):
        if k in dl_before:
            events.append(ev(ts, OpKind.DL, 0, dir_id=0))
            ts += 10
        events.append(ev(ts, OpKind.OP, fid=k))
        ts += 10
    return Trace.from_events(events, "ransomware")


class TestLocateTicks:
    def test_no_files_no_ticks(self, census10):
        t = Trace.from_events([ev(0, OpKind.DL)])
        assert locate_ticks(t, census10) == []

    def test_full_coverage_fires_all_ticks(self):
        census = make_census(1000)
        trace = _touch_trace(1000)
        ticks = locate_ticks(trace, census)
        assert len(ticks) == 28
        # 0.1% of 1000 files is one file: tick 1 fires at the first touch
        assert ticks[0] == 0
        assert all(b >= a for a, b in zip(ticks, ticks[1:]))

    def test_small_coverage_fires_low_ticks_only(self):
        census = make_census(10_000)
        trace = _touch_trace(20)  # 0.2% of the census
        ticks = locate_ticks(trace, census)
        schedule = tick_schedule()
        expected = sum(1 for f in schedule.fractions if f <= 0.002)
        assert len(ticks) == expected == 3


class TestExtractFeatures6:
    def test_empty_interval_is_zero(self, census10, rw_trace):
        vec = extract_features6(rw_trace, (0, 0), census10)
        assert vec.as_array().tolist() == [0, 0, 0, 0, 0.0, 0.0]

    def test_write_entropy_mean(self, census10):
        events = [ev(i * 10, OpKind.WT, fid=1, entropy=0.88) for i in range(5)]
        t = Trace.from_events(events)
        vec = extract_features6(t, (0, 5), census10)
        assert vec.n_wt == 5
        assert vec.avg_wt_entropy == pytest.approx(0.88)

    def test_type_coverage_is_max_over_extensions(self):
        files = {}
        for fid in range(1, 5):
            files[fid] = FileInfo(".docx", 100, 0)
        for fid in range(5, 105):
            files[fid] = FileInfo(".log", 100, 0)
        census = FileCensus(files=files, dirs={0: None})
        events = [ev(0, OpKind.OP, 1), ev(1, OpKind.OP, 2), ev(2, OpKind.OP, 5)]
        vec = extract_features6(Trace.from_events(events), (0, 3), census)
        assert vec.type_coverage == pytest.approx(0.5)
        mean_vec = extract_features6(Trace.from_events(events), (0, 3), census,
                                     coverage_agg="mean")
        assert mean_vec.type_coverage == pytest.approx((2 / 4 + 1 / 100) / 2)

    def test_additivity_over_adjacent_intervals(self, census10, rw_trace):
        n = len(rw_trace.events)
        mid = n // 2
        a = extract_features6(rw_trace, (0, mid), census10).as_array()
        b = extract_features6(rw_trace, (mid, n), census10).as_array()
        both = extract_features6(rw_trace, (0, n), census10).as_array()
        assert np.array_equal(both[:4], a[:4] + b[:4])
        weighted = (a[5] * a[2] + b[5] * b[2]) / (a[2] + b[2])
        assert both[5] == pytest.approx(weighted)


class TestBuildTrainingSet:
    def test_no_ticks_no_rows(self, census10):
        t = Trace.from_events([ev(0, OpKind.DL)])
        datasets = build_training_set([t], census10)
        assert all(ds.n_rows == 0 for ds in datasets.values())

    def test_tier_routing_for_three_ticks(self):
        census = make_census(1000)
        trace = _touch_trace(2)  # thresholds 1, 2, 2: ticks 1..3 fire
        assert len(locate_ticks(trace, census)) == 3
        datasets = build_training_set([trace], census)
        rows = {t: ds.n_rows for t, ds in datasets.items()}
        assert rows == {1: 3, 2: 2, 3: 0, 4: 0, 5: 0, 6: 0}

    def test_full_coverage_contributes_28_tier1_rows(self):
        census = make_census(1000)
        trace = _touch_trace(1000)
        datasets = build_training_set([trace], census)
        assert datasets[1].n_rows == 28
        assert datasets[6].n_rows == 1
        assert set(datasets[1].y.tolist()) == {1}


class TestKRule:
    def test_example_pattern(self):
        # positives T T F T T T with K=3 flags at the sixth tick
        assert _first_k_run([True, True, False, True, True, True],
                            [1, 2, 3, 4, 5, 6], 3) == 6

    def test_flipping_any_positive_in_exact_run_clears_it(self):
        base = [False, True, True, True, False]
        ticks = list(range(1, 6))
        assert _first_k_run(base, ticks, 3) == 4
        for i in (1, 2, 3):
            flipped = list(base)
            flipped[i] = False
            assert _first_k_run(flipped, ticks, 3) is None

    def test_brute_force_over_all_length_10_patterns(self):
        ticks = list(range(1, 11))
        for mask in range(2 ** 10):
            bits = [(mask >> i) & 1 == 1 for i in range(10)]
            text = "".join("1" if b else "0" for b in bits)
            pos = text.find("111")
            expected = ticks[pos + 2] if pos >= 0 else None
            assert _first_k_run(bits, ticks, 3) == expected


class TestTieredDetect:
    def _setup(self, n_files=1000, dl_before=frozenset(), n_touch=1000):
        census = make_census(n_files)
        schedule = tick_schedule(6)
        trace = _touch_trace(n_touch, dl_before)
        return census, schedule, trace

    def test_all_zero_probabilities_benign(self):
        census, schedule, trace = self._setup()
        models = {t: const_forest(0.0) for t in range(1, 7)}
        verdict = tiered_detect(trace, census, models, schedule=schedule)
        assert not verdict.malicious
        assert verdict.first_detection is None
        assert all(p == 0.0 for p in verdict.per_interval_probs)

    def test_fewer_than_k_ticks_all_positive_is_benign(self):
        census, schedule, trace = self._setup(n_touch=4)  # ticks 1..2 of 6
        models = {t: const_forest(1.0) for t in range(1, 7)}
        verdict = tiered_detect(trace, census, models, schedule=schedule)
        assert not verdict.malicious

    def test_positive_run_pattern_with_single_tier(self):
        # 6-tick schedule on 1000 files: ticks fire at files 1,4,16,64,252,1000;
        # listings land in the intervals of ticks 1,2,4,5,6 but not 3
        census, schedule, _ = self._setup()
        trace = _touch_trace(1000, dl_before={1, 3, 20, 100, 500})
        detector = TieredDetector(
            {1: dl_forest()}, census, schedule, TierSpec(n_tiers=1, n_ticks=6),
            DetectionPolicy(),
        )
        probs = detector.detect(trace).per_interval_probs
        assert [p > 0.5 for p in probs] == [True, True, False, True, True, True]
        assert detector.detect(trace).first_detection == 6

    def test_missing_tier_model_rejected(self):
        census, schedule, trace = self._setup()
        with pytest.raises(DataError, match="missing tier model"):
            TieredDetector({1: const_forest(0.0)}, census, schedule,
                           TierSpec(n_tiers=6, n_ticks=6))

    def test_verdict_deterministic(self):
        census, schedule, trace = self._setup()
        models = {t: const_forest(1.0) for t in range(1, 7)}
        a = tiered_detect(trace, census, models, schedule=schedule)
        b = tiered_detect(trace, census, models, schedule=schedule)
        assert a == b

    def test_detect_many_matches_detect(self):
        census, schedule, _ = self._setup()
        traces = [_touch_trace(k) for k in (5, 100, 1000)]
        models = {t: dl_forest() for t in range(1, 7)}
        det = TieredDetector(models, census, schedule,
                             TierSpec(n_tiers=6, n_ticks=6), DetectionPolicy())
        assert det.detect_many(traces) == [det.detect(t) for t in traces]


def _timed_events(specs):
    return Trace.from_events([ev(ts, op, fid) for ts, op, fid in specs])


class TestWindowedFeatures:
    def test_events_within_one_second_give_one_window(self):
        t = _timed_events([(0, OpKind.RD, 1), (500_000, OpKind.WT, 1)])
        feats = windowed_features(t)
        assert len(feats) == 1
        assert feats[0] == FeatureVector8(1, 1, 0, 0, 0, 0, 0, 0)

    def test_distant_events_never_share_a_window(self):
        specs = [(0, OpKind.RD, 1)] * 10 + [(10_000_000, OpKind.WT, 1)] * 10
        t = Trace.from_events([ev(i, op, fid) for i, (_, op, fid) in enumerate(specs[:10])]
                              + [ev(10_000_000 + i, OpKind.WT, 1) for i in range(10)])
        feats = windowed_features(t)
        for f in feats:
            assert not (f.n_rd and f.n_wt)

    def test_boundary_event_belongs_to_next_window(self):
        t = _timed_events([(0, OpKind.RD, 1), (3_000_000, OpKind.WT, 1)])
        policy = DetectionPolicy()
        feats = windowed_features(t, policy)
        # window 0 is [0s,3s): only the read; the write first appears in [1s,4s)
        assert feats[0].n_rd == 1 and feats[0].n_wt == 0
        assert feats[1].n_wt == 1

    def test_zero_event_trace(self):
        assert windowed_features(Trace((), "benign")) == []


class TestWindowedDetect:
    def test_zero_event_trace_benign(self):
        verdict = windowed_detect(Trace((), "benign"), const_forest(1.0, 8))
        assert not verdict.malicious

    def test_single_positive_window_flags_at_zero(self):
        t = _timed_events([(0, OpKind.RD, 1)])
        verdict = windowed_detect(t, const_forest(1.0, 8))
        assert verdict.malicious and verdict.first_detection == 0

    def test_arity_checked(self):
        with pytest.raises(DataError, match="arity"):
            WindowedDetector(const_forest(1.0, 6))

    def test_window_index_reflects_step_position(self):
        t = _timed_events([(0, OpKind.RD, 1), (9_000_000, OpKind.WT, 1)])
        wt_tree = Split(feature_index=1, threshold=0.5, left=Leaf(0.0), right=Leaf(1.0))
        model = Forest([wt_tree], ForestParams(), tuple("abcdefgh"), 0)
        verdict = windowed_detect(t, model)
        # the write at 9s first appears in the window starting at 7s
        assert verdict.first_detection == 7


class _FixedDetector:
    def __init__(self, verdicts):
        self.verdicts = verdicts

    def detect(self, trace):
        return self.verdicts[trace]

    def detect_many(self, traces):
        return [self.verdicts[t] for t in traces]


class TestEvaluate:
    def test_all_correct_accuracy_one(self):
        good = Trace((), "benign")
        bad = Trace((ev(0, OpKind.OP, 1),), "ransomware")
        det = _FixedDetector({
            good: Verdict(False, None, ()),
            bad: Verdict(True, 1, (1.0,)),
        })
        metrics = evaluate(det, [good, bad])
        assert metrics == Metrics(1.0, 0.0, 1.0, 1, 1)

    def test_empty_input_rejected(self):
        with pytest.raises(DataError, match="empty"):
            evaluate(_FixedDetector({}), [])

    def test_split_ratio(self):
        traces = [Trace((), "benign") for _ in range(22)]
        traces += [Trace((ev(i, OpKind.OP, 1),), "ransomware") for i in range(11)]
        train, test = split_train_test(traces, seed=3)
        assert len(test) == 2 + 1
        assert len(train) == 30
        train2, test2 = split_train_test(traces, seed=3)
        assert [t.label for t in test2] == [t.label for t in test]


class TestBundles:
    def test_tiered_roundtrip(self, tmp_path):
        census = make_census(1000)
        models = {t: const_forest(0.25) for t in range(1, 7)}
        save_tiered_bundle(tmp_path, models, tick_schedule(), DetectionPolicy(),
                           extras={"seed": 5})
        bundle = load_bundle(tmp_path)
        assert bundle.kind == "tiered"
        assert bundle.manifest["seed"] == 5
        assert bundle.manifest["tier_lookbacks"] == [1, 2, 4, 8, 16, 28]
        det = bundle.detector(census)
        verdict = det.detect(_touch_trace(1000))
        assert not verdict.malicious

    def test_windowed_roundtrip(self, tmp_path):
        save_windowed_bundle(tmp_path, const_forest(1.0, 8), DetectionPolicy())
        bundle = load_bundle(tmp_path)
        det = bundle.detector()
        t = _timed_events([(0, OpKind.RD, 1)])
        assert det.detect(t).malicious
