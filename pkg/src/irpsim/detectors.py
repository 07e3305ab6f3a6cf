"""Behavioral detectors: the tiered tick detector and the sliding-window detector.

The tiered detector milestones each process's life by the fraction of census
files it has touched (28 geometrically spaced ticks from 0.1% to 100%),
extracts six features over multi-tick lookback intervals, and flags a process
once K consecutive ticks are classified malicious by any applicable tier
model. The windowed detector counts eight operation kinds inside a sliding
3-second window and flags a process on any positive window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError, FormatError
from .forest import Dataset, Forest, ForestParams, load_model, save_model, train_forest
from .trace import BENIGN, RANSOMWARE, FileCensus, OpKind, Trace

N_TICKS = 28
FIRST_TICK_FRACTION = 0.001

FEATURES6 = ("n_dl", "n_rd", "n_wt", "n_rn", "type_coverage", "avg_wt_entropy")
FEATURES8 = ("n_rd", "n_wt", "n_op", "n_cl", "n_frd", "n_fwt", "n_fop", "n_fcl")
WINDOW_OPS = (
    OpKind.RD,
    OpKind.WT,
    OpKind.OP,
    OpKind.CL,
    OpKind.FRD,
    OpKind.FWT,
    OpKind.FOP,
    OpKind.FCL,
)

BUNDLE_VERSION = 1


@dataclass(frozen=True)
class TickSchedule:
    """Coverage fractions at which process-lifetime milestones fire."""

    fractions: tuple[float, ...]

    def __post_init__(self) -> None:
        f = self.fractions
        if any(b <= a for a, b in zip(f, f[1:])):
            raise ValueError("tick fractions must be strictly increasing")
        if not math.isclose(f[0], FIRST_TICK_FRACTION) or f[-1] != 1.0:
            raise ValueError("tick fractions must run from 0.001 to 1.0")

    def thresholds(self, n_files: int) -> np.ndarray:
        """Distinct-file counts needed to reach each tick on an n_files census."""
        # epsilon guards the count/n_files >= fraction comparison against
        # float noise at exact multiples
        return np.array(
            [math.ceil(f * n_files - 1e-9) for f in self.fractions], dtype=np.int64
        )

    def __len__(self) -> int:
        return len(self.fractions)


def tick_schedule(n_ticks: int = N_TICKS) -> TickSchedule:
    """Geometric fractions from 0.1% to 100% of census files."""
    span = 1.0 / FIRST_TICK_FRACTION
    fractions = [
        FIRST_TICK_FRACTION * span ** (i / (n_ticks - 1)) for i in range(n_ticks)
    ]
    fractions[0] = FIRST_TICK_FRACTION
    fractions[-1] = 1.0
    return TickSchedule(tuple(fractions))


@dataclass(frozen=True)
class TierSpec:
    """Lookback (in ticks) for each tier model: 2^(t-1), clamped to the tick count.

    Tier t is applicable at tick i only when its full lookback fits, i.e.
    i >= lookback(t); the widest tier then spans the whole history (0, i].
    """

    n_tiers: int = 6
    n_ticks: int = N_TICKS

    def lookback(self, tier: int) -> int:
        if not 1 <= tier <= self.n_tiers:
            raise ValueError(f"tier {tier} outside 1..{self.n_tiers}")
        return min(2 ** (tier - 1), self.n_ticks)

    @property
    def lookbacks(self) -> tuple[int, ...]:
        return tuple(self.lookback(t) for t in range(1, self.n_tiers + 1))

    def tiers_at(self, tick: int) -> list[int]:
        """Tiers applicable at a (1-based) tick index."""
        return [t for t in range(1, self.n_tiers + 1) if tick >= self.lookback(t)]


@dataclass(frozen=True)
class FeatureVector6:
    n_dl: int
    n_rd: int
    n_wt: int
    n_rn: int
    type_coverage: float
    avg_wt_entropy: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.n_dl, self.n_rd, self.n_wt, self.n_rn, self.type_coverage, self.avg_wt_entropy],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class FeatureVector8:
    n_rd: int
    n_wt: int
    n_op: int
    n_cl: int
    n_frd: int
    n_fwt: int
    n_fop: int
    n_fcl: int

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.n_rd, self.n_wt, self.n_op, self.n_cl,
             self.n_frd, self.n_fwt, self.n_fop, self.n_fcl],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class DetectionPolicy:
    k_consecutive: int = 3
    prob_threshold: float = 0.5
    window_len_us: int = 3_000_000
    window_step_us: int = 1_000_000

    def __post_init__(self) -> None:
        if self.k_consecutive < 1:
            raise ValueError("k_consecutive must be >= 1")
        if self.window_step_us > self.window_len_us:
            raise ValueError("window step must not exceed window length")

    def to_obj(self) -> dict:
        return {
            "k_consecutive": self.k_consecutive,
            "prob_threshold": self.prob_threshold,
            "window_len_us": self.window_len_us,
            "window_step_us": self.window_step_us,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "DetectionPolicy":
        return cls(**{k: obj[k] for k in cls().to_obj()})


@dataclass(frozen=True)
class Verdict:
    malicious: bool
    first_detection: int | None
    per_interval_probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.malicious != (self.first_detection is not None):
            raise ValueError("malicious iff first_detection is present")


class _TraceView:
    """Precomputed per-trace arrays for fast interval feature extraction."""

    _OP_CODE = {op: i for i, op in enumerate(OpKind)}

    def __init__(self, trace: Trace, census: FileCensus | None = None):
        events = trace.events
        n = len(events)
        self.n_events = n
        self.ts = np.fromiter((e.ts_us for e in events), np.int64, n)
        code = self._OP_CODE
        codes = np.fromiter((code[e.op] for e in events), np.int8, n)
        self._cum: dict[OpKind, np.ndarray] = {}
        for op in OpKind:
            mask = codes == code[op]
            if op in (OpKind.DL, OpKind.RD, OpKind.WT, OpKind.RN) or mask.any():
                self._cum[op] = np.concatenate(([0], np.cumsum(mask)))
        ent = np.fromiter(
            (
                (e.entropy or 0.0) if e.op is OpKind.WT else 0.0
                for e in events
            ),
            np.float64,
            n,
        )
        self.cum_wt_entropy = np.concatenate(([0.0], np.cumsum(ent)))

        # distinct-file machinery (coverage + tick location)
        fids = np.fromiter((e.file_id for e in events), np.int64, n)
        distinct = list(dict.fromkeys(int(f) for f in fids if f))
        self.distinct_files = distinct
        index_of = {f: i for i, f in enumerate(distinct)}
        self.compact_fid = np.fromiter(
            (index_of[int(f)] if f else -1 for f in fids), np.int64, n
        )
        first = np.zeros(n, dtype=bool)
        seen: set[int] = set()
        for i, f in enumerate(fids):
            if f and int(f) not in seen:
                seen.add(int(f))
                first[i] = True
        self.cum_distinct = np.cumsum(first)

        if census is not None:
            exts = sorted(census.totals)
            ext_idx = {x: i for i, x in enumerate(exts)}
            self.ext_totals = np.array([census.totals[x] for x in exts], dtype=np.float64)
            self.ext_of_compact = np.array(
                [ext_idx.get(census.files[f].ext, -1) if f in census.files else -1
                 for f in distinct],
                dtype=np.int64,
            )
            self.n_exts = len(exts)

    def count(self, op: OpKind, lo: int, hi: int) -> int:
        cum = self._cum.get(op)
        if cum is None:
            return 0
        return int(cum[hi] - cum[lo])

    def features6(self, lo: int, hi: int, coverage_agg: str = "max") -> np.ndarray:
        n_wt = self.count(OpKind.WT, lo, hi)
        avg_ent = 0.0
        if n_wt:
            avg_ent = float(
                (self.cum_wt_entropy[hi] - self.cum_wt_entropy[lo]) / n_wt
            )
        cov = 0.0
        slice_fids = self.compact_fid[lo:hi]
        slice_fids = slice_fids[slice_fids >= 0]
        if slice_fids.size:
            uniq = np.unique(slice_fids)
            exts = self.ext_of_compact[uniq]
            exts = exts[exts >= 0]
            if exts.size:
                counts = np.bincount(exts, minlength=self.n_exts)
                present = counts > 0
                ratios = counts[present] / self.ext_totals[present]
                cov = float(ratios.max() if coverage_agg == "max" else ratios.mean())
        return np.array(
            [
                self.count(OpKind.DL, lo, hi),
                self.count(OpKind.RD, lo, hi),
                n_wt,
                self.count(OpKind.RN, lo, hi),
                min(1.0, cov),
                avg_ent,
            ],
            dtype=np.float64,
        )

    def features8(self, lo: int, hi: int) -> np.ndarray:
        return np.array([self.count(op, lo, hi) for op in WINDOW_OPS], dtype=np.float64)


def locate_ticks(
    trace: Trace, census: FileCensus, schedule: TickSchedule | None = None
) -> list[int]:
    """Event index at which each tick fires; ticks never reached are absent.

    Tick i fires at the first event where the count of distinct files touched
    so far reaches fraction f_i of the census. Fired ticks always form a
    prefix of the schedule, and their event indices are non-decreasing
    (several ticks can fire at the same event on small censuses).
    """
    schedule = schedule or tick_schedule()
    view = trace if isinstance(trace, _TraceView) else _TraceView(trace)
    return _locate_ticks_view(view, census.n_files, schedule)


def _locate_ticks_view(view: _TraceView, n_files: int, schedule: TickSchedule) -> list[int]:
    if view.n_events == 0:
        return []
    thresholds = schedule.thresholds(n_files)
    total = int(view.cum_distinct[-1]) if view.n_events else 0
    fired = thresholds[thresholds <= total]
    if fired.size == 0:
        return []
    idx = np.searchsorted(view.cum_distinct, fired, side="left")
    return [int(i) for i in idx]


def extract_features6(
    trace: Trace,
    interval: tuple[int, int],
    census: FileCensus,
    coverage_agg: str = "max",
) -> FeatureVector6:
    """Six behavioral features over a half-open event-index interval [lo, hi)."""
    lo, hi = interval
    if lo < 0 or hi > len(trace.events) or lo > hi:
        raise ValueError(f"interval {interval} outside trace bounds")
    view = _TraceView(trace, census)
    vec = view.features6(lo, hi, coverage_agg)
    return FeatureVector6(
        n_dl=int(vec[0]), n_rd=int(vec[1]), n_wt=int(vec[2]), n_rn=int(vec[3]),
        type_coverage=float(vec[4]), avg_wt_entropy=float(vec[5]),
    )


def _tick_tier_rows(
    view: _TraceView,
    n_files: int,
    schedule: TickSchedule,
    tiers: TierSpec,
    coverage_agg: str,
) -> tuple[list[tuple[int, int]], np.ndarray]:
    """All (tick, tier) feature rows for one trace.

    Returns parallel (tick_number, tier) metadata and the row matrix. The
    interval for tier t at tick i spans events after tick i-lookback(t)
    through tick i inclusive; lookback equal to i starts at the trace origin.
    """
    tick_events = _locate_ticks_view(view, n_files, schedule)
    meta: list[tuple[int, int]] = []
    rows: list[np.ndarray] = []
    for pos, ev_idx in enumerate(tick_events):
        tick = pos + 1
        for tier in tiers.tiers_at(tick):
            back = tick - tiers.lookback(tier)
            lo = 0 if back == 0 else tick_events[back - 1] + 1
            rows.append(view.features6(lo, ev_idx + 1, coverage_agg))
            meta.append((tick, tier))
    matrix = np.vstack(rows) if rows else np.zeros((0, len(FEATURES6)))
    return meta, matrix


def build_training_set(
    traces: Iterable[Trace],
    census: FileCensus,
    schedule: TickSchedule | None = None,
    tiers: TierSpec | None = None,
    coverage_agg: str = "max",
) -> dict[int, Dataset]:
    """Assemble one labeled dataset per tier from every fired (tick, tier) pair."""
    schedule = schedule or tick_schedule()
    tiers = tiers or TierSpec()
    per_tier_rows: dict[int, list[np.ndarray]] = {t: [] for t in range(1, tiers.n_tiers + 1)}
    per_tier_labels: dict[int, list[int]] = {t: [] for t in range(1, tiers.n_tiers + 1)}
    for trace in traces:
        view = _TraceView(trace, census)
        meta, matrix = _tick_tier_rows(view, census.n_files, schedule, tiers, coverage_agg)
        label = 1 if trace.label == RANSOMWARE else 0
        for (_, tier), row in zip(meta, matrix):
            per_tier_rows[tier].append(row)
            per_tier_labels[tier].append(label)
    out: dict[int, Dataset] = {}
    for tier in per_tier_rows:
        rows = per_tier_rows[tier]
        X = np.vstack(rows) if rows else np.zeros((0, len(FEATURES6)))
        y = np.array(per_tier_labels[tier], dtype=np.int8)
        out[tier] = Dataset(X=X, y=y, feature_names=FEATURES6)
    return out


def _first_k_run(positives: list[bool], tick_numbers: list[int], k: int) -> int | None:
    """Tick number of the k-th element of the first run of k consecutive positives."""
    run = 0
    for flag, tick in zip(positives, tick_numbers):
        run = run + 1 if flag else 0
        if run >= k:
            return tick
    return None


class TieredDetector:
    """Per-tier forests applied at every tick, with a K-consecutive rule."""

    def __init__(
        self,
        models: dict[int, Forest],
        census: FileCensus,
        schedule: TickSchedule | None = None,
        tiers: TierSpec | None = None,
        policy: DetectionPolicy | None = None,
        coverage_agg: str = "max",
    ):
        self.tiers = tiers or TierSpec()
        for t in range(1, self.tiers.n_tiers + 1):
            if t not in models:
                raise DataError(f"missing tier model {t}")
        self.models = models
        self.census = census
        self.schedule = schedule or tick_schedule()
        self.policy = policy or DetectionPolicy()
        self.coverage_agg = coverage_agg

    def _row_probs(self, traces: list[Trace]) -> list[tuple[list[tuple[int, int]], np.ndarray]]:
        """Per-trace (meta, prob) pairs, with tier predictions batched across traces."""
        metas: list[list[tuple[int, int]]] = []
        matrices: list[np.ndarray] = []
        for trace in traces:
            view = _TraceView(trace, self.census)
            meta, matrix = _tick_tier_rows(
                view, self.census.n_files, self.schedule, self.tiers, self.coverage_agg
            )
            metas.append(meta)
            matrices.append(matrix)
        # group rows by tier across traces for one batched predict per tier
        tier_rows: dict[int, list[np.ndarray]] = {}
        tier_src: dict[int, list[tuple[int, int]]] = {}
        for ti, (meta, matrix) in enumerate(zip(metas, matrices)):
            for ri, (_, tier) in enumerate(meta):
                tier_rows.setdefault(tier, []).append(matrix[ri])
                tier_src.setdefault(tier, []).append((ti, ri))
        probs = [np.zeros(len(meta)) for meta in metas]
        for tier, rows in tier_rows.items():
            p = self.models[tier].predict_batch(np.vstack(rows))
            for (ti, ri), prob in zip(tier_src[tier], p):
                probs[ti][ri] = prob
        return list(zip(metas, probs))

    def _verdict(self, meta: list[tuple[int, int]], probs: np.ndarray) -> Verdict:
        per_tick: dict[int, float] = {}
        for (tick, _), p in zip(meta, probs):
            per_tick[tick] = max(per_tick.get(tick, 0.0), float(p))
        ticks = sorted(per_tick)
        tick_probs = [per_tick[t] for t in ticks]
        positives = [p > self.policy.prob_threshold for p in tick_probs]
        first = _first_k_run(positives, ticks, self.policy.k_consecutive)
        return Verdict(
            malicious=first is not None,
            first_detection=first,
            per_interval_probs=tuple(tick_probs),
        )

    def detect(self, trace: Trace) -> Verdict:
        meta, probs = self._row_probs([trace])[0]
        return self._verdict(meta, probs)

    def detect_many(self, traces: list[Trace]) -> list[Verdict]:
        return [self._verdict(meta, probs) for meta, probs in self._row_probs(traces)]

    def vector_probs(self, traces: list[Trace]) -> np.ndarray:
        """Probabilities of every (tick, tier) classifier query across traces."""
        chunks = [probs for _, probs in self._row_probs(traces)]
        return np.concatenate(chunks) if chunks else np.zeros(0)


def tiered_detect(
    trace: Trace,
    census: FileCensus,
    models: dict[int, Forest],
    policy: DetectionPolicy | None = None,
    schedule: TickSchedule | None = None,
    coverage_agg: str = "max",
) -> Verdict:
    """Verdict of the tiered detector on one trace.

    A tick is positive when any applicable tier's prediction exceeds the
    probability threshold; the trace is malicious when k_consecutive
    consecutive ticks are positive, and first_detection is the tick number
    closing the first such run.
    """
    det = TieredDetector(models, census, schedule, policy=policy, coverage_agg=coverage_agg)
    return det.detect(trace)


def _window_spans(view: _TraceView, policy: DetectionPolicy) -> list[tuple[int, int, int]]:
    """Non-empty, deduplicated (window_index, lo, hi) spans over the event array."""
    if view.n_events == 0:
        return []
    last_ts = int(view.ts[-1])
    spans: list[tuple[int, int, int]] = []
    prev: tuple[int, int] | None = None
    start = 0
    k = 0
    while start <= last_ts:
        lo = int(np.searchsorted(view.ts, start, side="left"))
        hi = int(np.searchsorted(view.ts, start + policy.window_len_us, side="left"))
        if hi > lo and (lo, hi) != prev:
            spans.append((k, lo, hi))
            prev = (lo, hi)
        start += policy.window_step_us
        k += 1
    return spans


def windowed_features(trace: Trace, policy: DetectionPolicy | None = None) -> list[FeatureVector8]:
    """Eight op-count features for each non-empty sliding window.

    Windows are half-open [start, start + window_len) stepped by window_step
    from ts 0 through the last event; empty windows are skipped and
    consecutive windows containing the identical event span appear once.
    """
    policy = policy or DetectionPolicy()
    view = _TraceView(trace)
    out = []
    for _, lo, hi in _window_spans(view, policy):
        vec = view.features8(lo, hi)
        out.append(FeatureVector8(*(int(v) for v in vec)))
    return out


def build_window_training_set(
    traces: Iterable[Trace], policy: DetectionPolicy | None = None
) -> Dataset:
    """One labeled row per non-empty window across all traces."""
    policy = policy or DetectionPolicy()
    rows: list[np.ndarray] = []
    labels: list[int] = []
    for trace in traces:
        view = _TraceView(trace)
        label = 1 if trace.label == RANSOMWARE else 0
        for _, lo, hi in _window_spans(view, policy):
            rows.append(view.features8(lo, hi))
            labels.append(label)
    X = np.vstack(rows) if rows else np.zeros((0, len(FEATURES8)))
    return Dataset(X=X, y=np.array(labels, dtype=np.int8), feature_names=FEATURES8)


class WindowedDetector:
    """A single forest over sliding-window op counts; any positive window flags."""

    def __init__(self, model: Forest, policy: DetectionPolicy | None = None):
        if model.arity != len(FEATURES8):
            raise DataError(f"arity mismatch: windowed model needs {len(FEATURES8)} features")
        self.model = model
        self.policy = policy or DetectionPolicy()

    def detect(self, trace: Trace) -> Verdict:
        view = _TraceView(trace)
        spans = _window_spans(view, self.policy)
        if not spans:
            return Verdict(False, None, ())
        X = np.vstack([view.features8(lo, hi) for _, lo, hi in spans])
        probs = self.model.predict_batch(X)
        first = None
        for (k, _, _), p in zip(spans, probs):
            if p > self.policy.prob_threshold:
                first = k
                break
        return Verdict(
            malicious=first is not None,
            first_detection=first,
            per_interval_probs=tuple(float(p) for p in probs),
        )

    def detect_many(self, traces: list[Trace]) -> list[Verdict]:
        return [self.detect(t) for t in traces]

    def vector_probs(self, traces: list[Trace]) -> np.ndarray:
        chunks = []
        for trace in traces:
            view = _TraceView(trace)
            spans = _window_spans(view, self.policy)
            if spans:
                X = np.vstack([view.features8(lo, hi) for _, lo, hi in spans])
                chunks.append(self.model.predict_batch(X))
        return np.concatenate(chunks) if chunks else np.zeros(0)


def windowed_detect(
    trace: Trace, model: Forest, policy: DetectionPolicy | None = None
) -> Verdict:
    return WindowedDetector(model, policy).detect(trace)


@dataclass(frozen=True)
class Metrics:
    detection_rate: float
    fpr: float
    accuracy: float
    n_ransomware: int = 0
    n_benign: int = 0


def evaluate(detector, traces: list[Trace]) -> Metrics:
    """Trace-verdict metrics: detection rate over ransomware, FPR over benign."""
    if not traces:
        raise DataError("cannot evaluate on an empty trace set")
    verdicts = (
        detector.detect_many(traces)
        if hasattr(detector, "detect_many")
        else [detector.detect(t) for t in traces]
    )
    tp = fp = tn = fn = 0
    for trace, verdict in zip(traces, verdicts):
        if trace.label == RANSOMWARE:
            tp, fn = tp + verdict.malicious, fn + (not verdict.malicious)
        else:
            fp, tn = fp + verdict.malicious, tn + (not verdict.malicious)
    n_r = tp + fn
    n_b = fp + tn
    return Metrics(
        detection_rate=tp / n_r if n_r else 0.0,
        fpr=fp / n_b if n_b else 0.0,
        accuracy=(tp + tn) / len(traces),
        n_ransomware=n_r,
        n_benign=n_b,
    )


def stratified_split_indices(
    labels: list[str], seed: int = 0, ratio: tuple[int, int] = (10, 1)
) -> tuple[list[int], list[int]]:
    """Seeded label-stratified train/test index partition (default 10:1)."""
    rng = np.random.default_rng([seed, 929])
    test_share = ratio[1] / (ratio[0] + ratio[1])
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in sorted(set(labels)):
        members = [i for i, lab in enumerate(labels) if lab == label]
        order = rng.permutation(len(members))
        n_test = max(1, round(len(members) * test_share)) if len(members) > 1 else 0
        chosen = set(int(i) for i in order[:n_test])
        for k, i in enumerate(members):
            (test_idx if k in chosen else train_idx).append(i)
    return sorted(train_idx), sorted(test_idx)


def split_train_test(
    traces: list[Trace], seed: int = 0, ratio: tuple[int, int] = (10, 1)
) -> tuple[list[Trace], list[Trace]]:
    """Seeded label-stratified train/test partition of traces (default 10:1)."""
    train_idx, test_idx = stratified_split_indices([t.label for t in traces], seed, ratio)
    return [traces[i] for i in train_idx], [traces[i] for i in test_idx]


def train_tiered_models(
    datasets: dict[int, Dataset],
    params: ForestParams = ForestParams(),
    n_trees: int = 100,
    seed: int = 0,
) -> dict[int, Forest]:
    """Train one forest per tier; tier t's model seed is derived from (seed, t).

    A tier whose training data holds a single class (or nothing) cannot be
    fit as a discriminator; it gets a neutral constant model at the decision
    threshold, which never votes positive on its own.
    """
    from .forest import Forest, Leaf

    models: dict[int, Forest] = {}
    for tier, ds in sorted(datasets.items()):
        n_benign, n_malicious = ds.label_counts()
        if n_benign == 0 or n_malicious == 0:
            models[tier] = Forest(
                trees=[Leaf(0.5)], params=params,
                feature_names=ds.feature_names, seed=seed * 1009 + tier,
            )
            continue
        models[tier] = train_forest(ds, params, n_trees, seed * 1009 + tier)
    return models


def save_tiered_bundle(
    out_dir: str | Path,
    models: dict[int, Forest],
    schedule: TickSchedule,
    policy: DetectionPolicy,
    coverage_agg: str = "max",
    extras: dict | None = None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tiers = TierSpec(n_tiers=len(models), n_ticks=len(schedule))
    manifest = {
        "v": BUNDLE_VERSION,
        "kind": "tiered",
        "schedule": list(schedule.fractions),
        "policy": policy.to_obj(),
        "tier_lookbacks": list(tiers.lookbacks),
        "coverage_agg": coverage_agg,
        "feature_names": list(FEATURES6),
    }
    manifest.update(extras or {})
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    for tier, model in models.items():
        save_model(model, out / f"tier_{tier}.json")


def save_windowed_bundle(
    out_dir: str | Path,
    model: Forest,
    policy: DetectionPolicy,
    extras: dict | None = None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "v": BUNDLE_VERSION,
        "kind": "windowed",
        "policy": policy.to_obj(),
        "feature_names": list(FEATURES8),
    }
    manifest.update(extras or {})
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    save_model(model, out / "window.json")


@dataclass
class ModelBundle:
    kind: str
    policy: DetectionPolicy
    manifest: dict
    models: dict[int, Forest] = field(default_factory=dict)
    window_model: Forest | None = None
    schedule: TickSchedule | None = None
    coverage_agg: str = "max"

    def detector(self, census: FileCensus | None = None):
        if self.kind == "tiered":
            if census is None:
                raise DataError("tiered detector requires a census")
            return TieredDetector(
                self.models,
                census,
                self.schedule,
                TierSpec(n_tiers=len(self.models)),
                self.policy,
                self.coverage_agg,
            )
        assert self.window_model is not None
        return WindowedDetector(self.window_model, self.policy)


def load_bundle(bundle_dir: str | Path) -> ModelBundle:
    path = Path(bundle_dir)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json in {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("v") != BUNDLE_VERSION:
        raise FormatError(f"bundle: unsupported version {manifest.get('v')!r}")
    policy = DetectionPolicy.from_obj(manifest["policy"])
    if manifest["kind"] == "tiered":
        schedule = TickSchedule(tuple(manifest["schedule"]))
        models: dict[int, Forest] = {}
        tier = 1
        while (path / f"tier_{tier}.json").exists():
            models[tier] = load_model(path / f"tier_{tier}.json")
            tier += 1
        if not models:
            raise FormatError(f"bundle: no tier models in {path}")
        return ModelBundle(
            kind="tiered",
            policy=policy,
            manifest=manifest,
            models=models,
            schedule=schedule,
            coverage_agg=manifest.get("coverage_agg", "max"),
        )
    if manifest["kind"] == "windowed":
        return ModelBundle(
            kind="windowed",
            policy=policy,
            manifest=manifest,
            window_model=load_model(path / "window.json"),
        )
    raise FormatError(f"bundle: unknown kind {manifest['kind']!r}")
