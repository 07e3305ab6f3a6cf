"""Pipeline orchestration: generate, train, detect, split, sweep, report.

All artifacts are plain JSON/JSONL/CSV, fully determined by the top-level
seed. Traces are streamed from disk one at a time wherever possible so the
desk-scale corpus never has to fit in memory at once.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .detectors import (
    DetectionPolicy,
    Metrics,
    TieredDetector,
    WindowedDetector,
    build_training_set,
    build_window_training_set,
    evaluate,
    load_bundle,
    save_tiered_bundle,
    save_windowed_bundle,
    stratified_split_indices,
    tick_schedule,
    train_tiered_models,
)
from .errors import DataError, FormatError
from .evasion import (
    BenignProfile,
    SplitPlan,
    derive_profiles,
    functional_split,
    min_n_search,
    mimicry_plan,
    mimicry_split,
    process_split,
    profiles_from_json,
    save_plan,
)
from .forest import ForestParams, train_forest
from .synthgen import (
    GenConfig,
    gen_benign_trace,
    gen_census,
    gen_ransomware,
    save_config,
)
from .trace import (
    BENIGN,
    RANSOMWARE,
    FileCensus,
    OpKind,
    Trace,
    load_census,
    load_trace,
    save_census,
    save_trace,
)

log = logging.getLogger("irpsim")

DENOMINATORS = ("vectors", "processes", "samples")


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment cell grid: which detector, which attack, which widths."""

    data_dir: str
    model_dir: str
    out_dir: str
    detector: str = "tiered"
    attack: dict = field(default_factory=lambda: {"kind": "process", "name": "process"})
    sweep: tuple[int, ...] = (1, 2, 4, 16, 64, 256)
    seed: int = 0
    jobs: int = 1
    denominator: str = "vectors"
    n_trees: int = 100

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if self.denominator not in DENOMINATORS:
            raise ValueError(f"unknown denominator {self.denominator!r}")

    @classmethod
    def from_obj(cls, obj: dict) -> "ExperimentSpec":
        kwargs = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        if "sweep" in kwargs:
            kwargs["sweep"] = tuple(kwargs["sweep"])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"experiment spec: {exc}") from None


# --------------------------------------------------------------------------
# dataset on disk


def run_gen(config: GenConfig, out_dir: str | Path) -> Path:
    """Write census.json, traces/*.jsonl, labels.csv, and the resolved config."""
    out = Path(out_dir)
    traces_dir = out / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    census = gen_census(config)
    save_census(census, out / "census.json")
    save_config(config, out / "config.json")
    rows: list[tuple[str, str]] = []
    for i in range(config.n_benign):
        name = f"benign_{i:05d}.jsonl"
        save_trace(gen_benign_trace(census, config, i), traces_dir / name)
        rows.append((name, BENIGN))
    for i in range(config.n_ransomware):
        name = f"ransomware_{i:03d}.jsonl"
        save_trace(gen_ransomware(census, config, i), traces_dir / name)
        rows.append((name, RANSOMWARE))
    with (out / "labels.csv").open("w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["filename", "label"])
        writer.writerows(rows)
    log.info("generated %d traces into %s", len(rows), out)
    return out


def read_labels(data_dir: str | Path) -> list[tuple[str, str]]:
    path = Path(data_dir) / "labels.csv"
    if not path.exists():
        raise DataError(f"no labels.csv in {data_dir}")
    with path.open(newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header != ["filename", "label"]:
            raise FormatError(f"labels.csv: unexpected header {header}")
        return [(row[0], row[1]) for row in reader if row]


def iter_traces(
    data_dir: str | Path, names: list[str], labels: dict[str, str]
) -> Iterator[Trace]:
    traces_dir = Path(data_dir) / "traces"
    for name in names:
        t = load_trace(traces_dir / name)
        expected = labels[name]
        if t.label != expected:
            t = Trace(t.events, expected)
        yield t


# --------------------------------------------------------------------------
# training


def run_train(
    data_dir: str | Path,
    out_dir: str | Path,
    detector: str = "tiered",
    seed: int = 0,
    n_trees: int = 100,
    coverage_agg: str = "max",
    params: ForestParams | None = None,
) -> Metrics:
    """Train a detector on a seeded 10:1 split and write the model bundle.

    The bundle manifest records the held-out metrics and the exact test-file
    list so sweeps run against the same partition.
    """
    pairs = read_labels(data_dir)
    if not pairs:
        raise DataError("empty dataset")
    labels = [lab for _, lab in pairs]
    if len(set(labels)) < 2:
        raise DataError("single-class training set")
    census = load_census(Path(data_dir) / "census.json")
    train_idx, test_idx = stratified_split_indices(labels, seed)
    label_of = dict(pairs)
    train_names = [pairs[i][0] for i in train_idx]
    test_names = [pairs[i][0] for i in test_idx]
    params = params or ForestParams(class_weight=None)
    policy = DetectionPolicy()
    extras = {
        "seed": seed,
        "n_train": len(train_names),
        "n_test": len(test_names),
        "test_files": test_names,
        "n_trees": n_trees,
    }
    out = Path(out_dir)
    if detector == "tiered":
        log.info("building per-tier training sets from %d traces", len(train_names))
        datasets = build_training_set(
            iter_traces(data_dir, train_names, label_of), census,
            coverage_agg=coverage_agg,
        )
        log.info(
            "tier row counts: %s",
            {t: ds.n_rows for t, ds in sorted(datasets.items())},
        )
        models = train_tiered_models(datasets, params, n_trees, seed)
        schedule = tick_schedule()
        det = TieredDetector(models, census, schedule, policy=policy,
                             coverage_agg=coverage_agg)
    elif detector == "windowed":
        log.info("building window training set from %d traces", len(train_names))
        dataset = build_window_training_set(
            iter_traces(data_dir, train_names, label_of), policy
        )
        log.info("window rows: %d", dataset.n_rows)
        model = train_forest(dataset, params, n_trees, seed)
        det = WindowedDetector(model, policy)
    else:
        raise DataError(f"unknown detector kind {detector!r}")

    # held-out evaluation before writing, so the manifest carries it
    test_traces = list(iter_traces(data_dir, test_names, label_of))
    metrics = evaluate(det, test_traces)
    extras["heldout"] = {
        "detection_rate": metrics.detection_rate,
        "fpr": metrics.fpr,
        "accuracy": metrics.accuracy,
        "n_test_ransomware": metrics.n_ransomware,
        "n_test_benign": metrics.n_benign,
    }
    if detector == "tiered":
        save_tiered_bundle(out, models, schedule, policy, coverage_agg, extras)
    else:
        save_windowed_bundle(out, model, policy, extras)
    log.info(
        "%s detector: heldout detection_rate=%.3f fpr=%.4f accuracy=%.3f",
        detector, metrics.detection_rate, metrics.fpr, metrics.accuracy,
    )
    return metrics


# --------------------------------------------------------------------------
# attacks


def _parse_groups(groups: list[list[str]]) -> list[frozenset[OpKind]]:
    return [frozenset(OpKind(o) for o in g) for g in groups]


def resolve_profile(
    attack: dict,
    data_dir: str | Path | None,
    census: FileCensus | None,
) -> BenignProfile:
    """Profile for a mimicry attack: from a file, or derived from training benign."""
    if attack.get("profiles_path"):
        profiles = profiles_from_json(attack["profiles_path"])
    else:
        if data_dir is None or census is None:
            raise DataError("mimicry attack needs a dataset to derive profiles from")
        pairs = read_labels(data_dir)
        label_of = dict(pairs)
        benign_names = [n for n, lab in pairs if lab == BENIGN]
        profiles = derive_profiles(
            iter_traces(data_dir, benign_names, label_of), census
        )
    wanted = attack.get("profile_ops")
    if wanted:
        ops = frozenset(OpKind(o) for o in wanted.split(","))
        for p in profiles:
            if p.class_ops == ops:
                return p
        raise DataError(f"no derived profile with operations {wanted}")
    hosts = [
        p for p in profiles
        if p.ratio.get(OpKind.RD, 0) > 0 and p.ratio.get(OpKind.WT, 0) > 0
        and p.file_access_fraction > 0
    ]
    if not hosts:
        raise DataError("no benign class can host encryption")
    return hosts[0]


def make_splitter(
    attack: dict,
    profile: BenignProfile | None = None,
    census: FileCensus | None = None,
    seed: int = 0,
) -> Callable[[Trace, int], list[Trace]]:
    """(trace, n) -> output traces for one attack descriptor.

    For process splitting n is the total process count; for functional
    splitting n is the per-group count; mimicry ignores n (the planner picks
    the count) unless n scales the planner's file-access cap.
    """
    kind = attack.get("kind", "process")
    if kind == "process":
        return process_split
    if kind == "functional":
        groups = _parse_groups(attack["groups"])

        def functional(trace: Trace, n: int) -> list[Trace]:
            return functional_split(trace, groups, n)

        return functional
    if kind == "mimicry":
        if profile is None or census is None:
            raise DataError("mimicry splitter needs a profile and census")
        tolerance = float(attack.get("tolerance", 0.05))

        def mimicry(trace: Trace, n: int) -> list[Trace]:
            plan = mimicry_plan(trace, census, profile, tolerance, seed)
            return mimicry_split(trace, plan)

        return mimicry
    raise DataError(f"unknown attack kind {kind!r}")


def run_split(
    trace_path: str | Path,
    attack: dict,
    out_dir: str | Path,
    census_path: str | Path | None = None,
    data_dir: str | Path | None = None,
    seed: int = 0,
) -> list[Path]:
    """Apply one attack to one trace and write the outputs plus the plan."""
    trace = load_trace(trace_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = attack.get("kind", "process")
    census = load_census(census_path) if census_path else None
    plan: SplitPlan
    if kind == "process":
        n = int(attack.get("n", 2))
        outputs = process_split(trace, n)
        plan = SplitPlan(kind="process", n=n)
    elif kind == "functional":
        groups = _parse_groups(attack["groups"])
        n = int(attack.get("n", 1))
        outputs = functional_split(trace, groups, n)
        plan = SplitPlan(
            kind="functional",
            groups=tuple(groups),
            per_group_n=tuple([n] * len(groups)),
        )
    elif kind == "mimicry":
        if census is None:
            raise DataError("mimicry needs --census")
        profile = resolve_profile(attack, data_dir, census)
        mp = mimicry_plan(trace, census, profile, float(attack.get("tolerance", 0.05)), seed)
        outputs = mimicry_split(trace, mp)
        plan = SplitPlan(kind="mimicry", mimicry=mp)
    else:
        raise DataError(f"unknown attack kind {kind!r}")
    save_plan(plan, out / "plan.json")
    paths = []
    for i, t in enumerate(outputs):
        p = out / f"split_{i:05d}.jsonl"
        save_trace(t, p)
        paths.append(p)
    log.info("wrote %d split traces to %s", len(paths), out)
    return paths


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepCell:
    n: int
    total_processes: int
    flagged_processes: int
    total_vectors: int
    flagged_vectors: int
    samples: int
    samples_flagged: int
    planned_processes: int = 0

    def rate(self, denominator: str) -> float:
        if denominator == "vectors":
            return self.flagged_vectors / self.total_vectors if self.total_vectors else 0.0
        if denominator == "processes":
            return self.flagged_processes / self.total_processes if self.total_processes else 0.0
        return self.samples_flagged / self.samples if self.samples else 0.0


def _sweep_cell(
    detector,
    test_ransomware: list[Trace],
    splitter: Callable[[Trace, int], list[Trace]],
    n: int,
    threshold: float,
) -> SweepCell:
    cell = SweepCell(n, 0, 0, 0, 0, len(test_ransomware), 0)
    for trace in test_ransomware:
        outputs = splitter(trace, n)
        verdicts = detector.detect_many(outputs)
        probs = detector.vector_probs(outputs)
        flagged = sum(v.malicious for v in verdicts)
        cell.total_processes += len(outputs)
        cell.flagged_processes += flagged
        cell.total_vectors += len(probs)
        cell.flagged_vectors += int((probs > threshold).sum())
        cell.samples_flagged += 1 if flagged else 0
        cell.planned_processes += len(outputs)
    return cell


def run_sweep(spec: ExperimentSpec) -> Path:
    """Evaluate one attack against one trained detector across the sweep widths.

    Writes curve.csv (one row per width), meta.json, and min_n.json with the
    per-sample minimum width achieving full evasion.
    """
    data_dir = Path(spec.data_dir)
    census = load_census(data_dir / "census.json")
    bundle = load_bundle(spec.model_dir)
    detector = bundle.detector(census)
    pairs = read_labels(data_dir)
    label_of = dict(pairs)
    test_names = bundle.manifest.get("test_files")
    if not test_names:
        _, test_idx = stratified_split_indices([lab for _, lab in pairs], spec.seed)
        test_names = [pairs[i][0] for i in test_idx]
    test_ransomware = [
        t for t in iter_traces(data_dir, [n for n in test_names if label_of[n] == RANSOMWARE], label_of)
    ]
    test_benign_names = [n for n in test_names if label_of[n] == BENIGN]
    if not test_ransomware:
        raise DataError("no ransomware traces in the test split")

    profile = None
    if spec.attack.get("kind") == "mimicry":
        profile = resolve_profile(spec.attack, data_dir, census)
    splitter = make_splitter(spec.attack, profile, census, spec.seed)
    threshold = bundle.policy.prob_threshold

    # benign false-positive rate is width-independent; compute once
    fp = 0
    n_benign = 0
    for t in iter_traces(data_dir, test_benign_names, label_of):
        fp += detector.detect(t).malicious
        n_benign += 1
    fpr = fp / n_benign if n_benign else 0.0

    sweep = spec.sweep if spec.attack.get("kind") != "mimicry" else (1,)
    cells: list[SweepCell] = []
    if spec.jobs > 1:
        with ThreadPoolExecutor(max_workers=spec.jobs) as pool:
            futures = [
                pool.submit(_sweep_cell, detector, test_ransomware, splitter, n, threshold)
                for n in sweep
            ]
            cells = [f.result() for f in futures]
    else:
        for n in sweep:
            cells.append(_sweep_cell(detector, test_ransomware, splitter, n, threshold))
            log.info(
                "sweep %s n=%d: rate=%.4f (%d/%d processes flagged)",
                spec.attack.get("name", spec.attack.get("kind")), n,
                cells[-1].rate(spec.denominator),
                cells[-1].flagged_processes, cells[-1].total_processes,
            )

    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "curve.csv").open("w", newline="") as fpcsv:
        writer = csv.writer(fpcsv)
        writer.writerow(
            ["n", "detection_rate", "fpr", "total_processes", "flagged_processes",
             "total_vectors", "flagged_vectors", "samples", "samples_flagged"]
        )
        for c in cells:
            writer.writerow(
                [c.n, f"{c.rate(spec.denominator):.6f}", f"{fpr:.6f}",
                 c.total_processes, c.flagged_processes,
                 c.total_vectors, c.flagged_vectors, c.samples, c.samples_flagged]
            )
    meta = {
        "attack": spec.attack,
        "detector": bundle.kind,
        "seed": spec.seed,
        "denominator": spec.denominator,
        "sweep": list(sweep),
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")

    if spec.attack.get("kind") != "mimicry":
        per_trace = []
        for i, trace in enumerate(test_ransomware):
            result = min_n_search(detector, trace, splitter, max_n=max(spec.sweep) * 4)
            per_trace.append({"sample": i, "n": result.n, "found": result.found})
        n_required = None
        if all(r["found"] for r in per_trace) and per_trace:
            n_required = max(r["n"] for r in per_trace)
        (out / "min_n.json").write_text(
            json.dumps({"per_trace": per_trace, "n_required": n_required},
                       sort_keys=True, indent=1) + "\n"
        )
    return out


# --------------------------------------------------------------------------
# reporting


_FIG_MAP = {
    ("process", "tiered"): "fig3.csv",
    ("functional", "tiered"): "fig4a.csv",
    ("functional_combined", "tiered"): "fig4b.csv",
    ("process", "windowed"): "fig5.csv",
    ("functional", "windowed"): "fig6a.csv",
    ("functional_combined", "windowed"): "fig6b.csv",
}


def run_report(out_dir: str | Path) -> dict:
    """Aggregate sweep outputs into per-figure CSVs and summary.json."""
    out = Path(out_dir)
    sweeps_root = out / "sweeps"
    runs = []
    warnings = []
    grouped: dict[tuple[str, str], list[tuple[Path, dict]]] = {}
    if sweeps_root.exists():
        for run_dir in sorted(sweeps_root.iterdir()):
            meta_path = run_dir / "meta.json"
            curve_path = run_dir / "curve.csv"
            if not (meta_path.exists() and curve_path.exists()):
                warnings.append(f"incomplete sweep output: {run_dir.name}")
                continue
            meta = json.loads(meta_path.read_text())
            name = meta["attack"].get("name", meta["attack"].get("kind", "attack"))
            grouped.setdefault((name, meta["detector"]), []).append((curve_path, meta))
            runs.append({"run": run_dir.name, "attack": name,
                         "detector": meta["detector"], "seed": meta["seed"]})
    else:
        warnings.append("no sweeps directory")

    aggregates: dict[str, dict] = {}
    for (name, det), members in sorted(grouped.items()):
        by_n: dict[int, list[float]] = {}
        for curve_path, _ in members:
            with curve_path.open(newline="") as fp:
                for row in csv.DictReader(fp):
                    by_n.setdefault(int(row["n"]), []).append(float(row["detection_rate"]))
        agg_rows = []
        for n in sorted(by_n):
            vals = by_n[n]
            agg_rows.append({
                "n": n,
                "detection_rate_mean": sum(vals) / len(vals),
                "detection_rate_min": min(vals),
                "detection_rate_max": max(vals),
                "runs": len(vals),
            })
        aggregates[f"{name}/{det}"] = {"points": agg_rows}
        fig = _FIG_MAP.get((name, det), f"{name}_{det}.csv")
        with (out / fig).open("w", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(["n", "detection_rate_mean", "detection_rate_min",
                             "detection_rate_max", "runs"])
            for r in agg_rows:
                writer.writerow([r["n"], f"{r['detection_rate_mean']:.6f}",
                                 f"{r['detection_rate_min']:.6f}",
                                 f"{r['detection_rate_max']:.6f}", r["runs"]])
    summary = {"runs": runs, "aggregates": aggregates, "warnings": warnings}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return summary
