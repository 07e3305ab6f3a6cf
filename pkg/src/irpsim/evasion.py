"""Multi-process evasion attacks expressed as pure trace transforms.

Three transforms split one ransomware trace into several per-process traces:
round-robin process splitting, per-operation functional splitting, and
mimicry, which shapes every output process's operation mix, entropy, and
file-access footprint to match an empirical benign behavioral class. All
transforms conserve the input events exactly: every non-dummy event appears
in exactly one output, unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, FormatError
from .trace import (
    DUMMY_WT_MAX_ENTROPY,
    MAIN_OPS,
    RANSOMWARE,
    FileCensus,
    IrpEvent,
    OpKind,
    Trace,
)

PLAN_VERSION = 1


# --------------------------------------------------------------------------
# process and functional splitting


def process_split(trace: Trace, n: int) -> list[Trace]:
    """Distribute one trace over n processes, each owning a subset of files.

    Distinct files are dealt round-robin in first-access order; every event
    follows its file's owner. Events with no target file (directory listings)
    are dealt round-robin by event. Timestamps and per-file event order are
    preserved; output pids are renumbered 0..n-1.
    """
    if n < 1:
        raise DataError("process count must be >= 1")
    owner = {fid: rank % n for rank, fid in enumerate(trace.distinct_file_ids())}
    buckets: list[list[IrpEvent]] = [[] for _ in range(n)]
    agnostic = 0
    for e in trace.events:
        if e.file_id:
            p = owner[e.file_id]
        else:
            p = agnostic % n
            agnostic += 1
        buckets[p].append(e)
    return [
        Trace(tuple(replace(e, pid=p) for e in evs), trace.label)
        for p, evs in enumerate(buckets)
    ]


def functional_split(
    trace: Trace,
    groups: Sequence[Iterable[OpKind]],
    per_group_n: int | Sequence[int] = 1,
) -> list[Trace]:
    """Route events into operation groups, then process-split inside each group.

    Groups must be disjoint and cover every operation kind present in the
    input. per_group_n is either one count for all groups or one per group;
    the output holds sum(per_group_n) traces with pids renumbered globally.
    """
    group_sets = [frozenset(g) for g in groups]
    if isinstance(per_group_n, int):
        counts = [per_group_n] * len(group_sets)
    else:
        counts = list(per_group_n)
        if len(counts) != len(group_sets):
            raise DataError("per_group_n length does not match groups")
    if any(c < 1 for c in counts):
        raise DataError("per-group process count must be >= 1")
    union: set[OpKind] = set()
    for g in group_sets:
        if union & g:
            raise DataError("overlapping groups")
        union |= g
    present = {e.op for e in trace.events}
    if not present <= union:
        missing = ",".join(sorted(op.value for op in present - union))
        raise DataError(f"groups do not cover operations: {missing}")

    streams: list[list[IrpEvent]] = [[] for _ in group_sets]
    lookup = {op: i for i, g in enumerate(group_sets) for op in g}
    for e in trace.events:
        streams[lookup[e.op]].append(e)

    outputs: list[Trace] = []
    for evs, n in zip(streams, counts):
        outputs.extend(process_split(Trace(tuple(evs), trace.label), n))
    return [t.with_pid(p) for p, t in enumerate(outputs)]


# --------------------------------------------------------------------------
# benign behavioral profiles


@dataclass(frozen=True)
class BenignProfile:
    """Empirical behavior of one benign process class.

    ratio holds the relative weight of each of the four main operations
    (smallest nonzero normalized to 1); file_access_fraction is the mean
    share of census files one process of this class touches.
    """

    class_ops: frozenset[OpKind]
    ratio: dict[OpKind, float]
    rd_entropy: float
    wt_entropy: float
    file_access_fraction: float
    prevalence: float = 0.0

    def __post_init__(self) -> None:
        if all(w <= 0 for w in self.ratio.values()):
            raise ValueError("profile ratio needs at least one positive weight")
        if not 0.0 <= self.file_access_fraction <= 1.0:
            raise ValueError("file_access_fraction outside [0,1]")

    def to_obj(self) -> dict:
        return {
            "ops": sorted(op.value for op in self.class_ops),
            "ratio": {op.value: w for op, w in self.ratio.items() if w},
            "rd_entropy": self.rd_entropy,
            "wt_entropy": self.wt_entropy,
            "file_access_fraction": self.file_access_fraction,
            "prevalence": self.prevalence,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "BenignProfile":
        ratio = {op: 0.0 for op in MAIN_OPS}
        for name, w in obj["ratio"].items():
            ratio[OpKind(name)] = float(w)
        return cls(
            class_ops=frozenset(OpKind(o) for o in obj["ops"]),
            ratio=ratio,
            rd_entropy=float(obj["rd_entropy"]),
            wt_entropy=float(obj["wt_entropy"]),
            file_access_fraction=float(obj["file_access_fraction"]),
            prevalence=float(obj.get("prevalence", 0.0)),
        )


class _ClassAccumulator:
    __slots__ = ("n", "count_sums", "rd_means", "wt_means", "fraction_sum")

    def __init__(self) -> None:
        self.n = 0
        self.count_sums = {op: 0 for op in MAIN_OPS}
        self.rd_means: list[float] = []
        self.wt_means: list[float] = []
        self.fraction_sum = 0.0


def derive_profiles(
    benign_traces: Iterable[Trace], census: FileCensus
) -> list[BenignProfile]:
    """Group benign traces by the main operations they exhibit and average each class.

    Emits one profile per class, sorted by prevalence (percent of traces),
    with mean op ratios normalized so the smallest nonzero weight is 1.
    Accepts any iterable and accumulates in one pass.
    """
    groups: dict[frozenset[OpKind], _ClassAccumulator] = {}
    total = 0
    for t in benign_traces:
        counts = _main_op_counts(t)
        ops = frozenset(op for op in MAIN_OPS if counts[op])
        if not ops:
            continue
        acc = groups.setdefault(ops, _ClassAccumulator())
        acc.n += 1
        total += 1
        for op in MAIN_OPS:
            acc.count_sums[op] += counts[op]
        rd = [e.entropy for e in t.events if e.op is OpKind.RD and e.entropy is not None]
        wt = [e.entropy for e in t.events if e.op is OpKind.WT and e.entropy is not None]
        if rd:
            acc.rd_means.append(sum(rd) / len(rd))
        if wt:
            acc.wt_means.append(sum(wt) / len(wt))
        acc.fraction_sum += len(t.distinct_file_ids()) / census.n_files
    if total == 0:
        raise DataError("cannot derive profiles from an empty trace set")
    profiles = []
    for ops, acc in groups.items():
        mean_counts = {op: s / acc.n for op, s in acc.count_sums.items()}
        smallest = min(v for v in mean_counts.values() if v > 0)
        profiles.append(
            BenignProfile(
                class_ops=ops,
                ratio={op: v / smallest for op, v in mean_counts.items()},
                rd_entropy=sum(acc.rd_means) / len(acc.rd_means) if acc.rd_means else 0.0,
                wt_entropy=sum(acc.wt_means) / len(acc.wt_means) if acc.wt_means else 0.0,
                file_access_fraction=acc.fraction_sum / acc.n,
                prevalence=100.0 * acc.n / total,
            )
        )
    profiles.sort(key=lambda p: (-p.prevalence, sorted(op.value for op in p.class_ops)))
    return profiles


def _main_op_counts(trace: Trace) -> dict[OpKind, int]:
    counts = {op: 0 for op in MAIN_OPS}
    for e in trace.events:
        if e.op in counts:
            counts[e.op] += 1
    return counts


def profiles_to_json(profiles: list[BenignProfile], stream: IO[str] | str | Path) -> None:
    if isinstance(stream, (str, Path)):
        with Path(stream).open("w", encoding="utf-8") as fp:
            profiles_to_json(profiles, fp)
        return
    json.dump(
        {"v": PLAN_VERSION, "profiles": [p.to_obj() for p in profiles]},
        stream,
        sort_keys=True,
        indent=1,
    )
    stream.write("\n")


def profiles_from_json(stream: IO[str] | str | Path) -> list[BenignProfile]:
    fp = Path(stream).open("r", encoding="utf-8") if isinstance(stream, (str, Path)) else stream
    close = fp is not stream
    try:
        obj = json.load(fp)
    except json.JSONDecodeError as exc:
        raise FormatError(f"profiles: invalid JSON: {exc.msg}") from None
    finally:
        if close:
            fp.close()
    if obj.get("v") != PLAN_VERSION:
        raise FormatError(f"profiles: unsupported version {obj.get('v')!r}")
    return [BenignProfile.from_obj(p) for p in obj["profiles"]]


# --------------------------------------------------------------------------
# mimicry


def ratio_conformant(
    counts: dict[OpKind, int], ratio: dict[OpKind, float], tolerance: float
) -> bool:
    """True when one scale fits every exhibited operation within tolerance.

    The check applies to the operations the process actually performs: a
    process that never renames simply belongs to a rename-free behavioral
    class, so a zero count never has to match a positive ratio weight. A
    positive count for an operation with zero profile weight always fails.
    """
    lam_lo, lam_hi = 0.0, math.inf
    for op in MAIN_OPS:
        c = counts.get(op, 0)
        r = ratio.get(op, 0.0)
        if c == 0:
            continue
        if r <= 0:
            return False
        lam_lo = max(lam_lo, c / (r * (1.0 + tolerance)))
        lam_hi = min(lam_hi, c / (r * (1.0 - tolerance)))
    return lam_lo <= lam_hi * (1.0 + 1e-12)


@dataclass(frozen=True)
class ProcessPlan:
    file_ids: tuple[int, ...]
    dl_events: int
    dummy_rd: int
    dummy_wt: int
    final_counts: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class MimicryPlan:
    profile: BenignProfile
    tolerance: float
    per_process: tuple[ProcessPlan, ...]
    n_processes: int
    seed: int
    n_input_events: int

    def to_obj(self) -> dict:
        return {
            "v": PLAN_VERSION,
            "kind": "mimicry",
            "profile": self.profile.to_obj(),
            "tolerance": self.tolerance,
            "n_processes": self.n_processes,
            "seed": self.seed,
            "n_input_events": self.n_input_events,
            "per_process": [
                {
                    "file_ids": list(p.file_ids),
                    "dl_events": p.dl_events,
                    "dummy_rd": p.dummy_rd,
                    "dummy_wt": p.dummy_wt,
                    "final_counts": p.final_counts,
                }
                for p in self.per_process
            ],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "MimicryPlan":
        return cls(
            profile=BenignProfile.from_obj(obj["profile"]),
            tolerance=float(obj["tolerance"]),
            per_process=tuple(
                ProcessPlan(
                    file_ids=tuple(p["file_ids"]),
                    dl_events=int(p["dl_events"]),
                    dummy_rd=int(p["dummy_rd"]),
                    dummy_wt=int(p["dummy_wt"]),
                    final_counts=dict(p.get("final_counts", {})),
                )
                for p in obj["per_process"]
            ),
            n_processes=int(obj["n_processes"]),
            seed=int(obj["seed"]),
            n_input_events=int(obj["n_input_events"]),
        )


@dataclass
class _ProcStats:
    files: tuple[int, ...]
    counts: dict[OpKind, int]
    wt_entropy_sum: float


def _per_file_stats(trace: Trace) -> tuple[dict[int, dict[OpKind, int]], dict[int, float], int]:
    by_file: dict[int, dict[OpKind, int]] = {}
    ent_by_file: dict[int, float] = {}
    n_dl_agnostic = 0
    for e in trace.events:
        if e.file_id:
            c = by_file.setdefault(e.file_id, {op: 0 for op in MAIN_OPS})
            if e.op in c:
                c[e.op] += 1
            if e.op is OpKind.WT and e.entropy is not None:
                ent_by_file[e.file_id] = ent_by_file.get(e.file_id, 0.0) + e.entropy
        elif e.op is OpKind.DL:
            n_dl_agnostic += 1
    return by_file, ent_by_file, n_dl_agnostic


def _lambda_interval(
    counts: dict[OpKind, int], ratio: dict[OpKind, float], tol: float
) -> tuple[float, float]:
    """Feasible scale interval given fixed counts and padding-only RD/WT."""
    lo, hi = 0.0, math.inf
    for op, c in counts.items():
        r = ratio.get(op, 0.0)
        if c == 0:
            continue
        if r <= 0:
            return (1.0, 0.0)
        lo = max(lo, c / (r * (1.0 + tol)))
        if op not in (OpKind.RD, OpKind.WT):
            hi = min(hi, c / (r * (1.0 - tol)))
    return lo, hi


def _integer_window(lam: float, r: float, tol: float) -> tuple[int, int]:
    return (
        math.ceil(lam * r * (1.0 - tol) - 1e-9),
        math.floor(lam * r * (1.0 + tol) + 1e-9),
    )


def _allocate_dl(
    procs: list[_ProcStats],
    intervals: list[tuple[float, float]],
    supply: int,
    r_dl: float,
    tol: float,
) -> list[int] | None:
    """Balanced allocation of directory-listing events to a subset of processes.

    Each hosting process must receive a count consistent with some scale in
    its feasible interval; non-hosting processes receive zero (their class
    simply omits listings). Returns per-process counts or None.
    """
    if supply == 0:
        return [0] * len(procs)
    if r_dl <= 0:
        return None
    windows = []
    for lo, hi in intervals:
        if lo > hi:
            return None
        w_lo = max(1, math.ceil(lo * r_dl * (1.0 - tol) - 1e-9))
        w_hi = math.floor(min(hi, 1e18) * r_dl * (1.0 + tol) + 1e-9)
        windows.append((w_lo, w_hi))
    hosts = [i for i, (lo, hi) in enumerate(windows) if hi >= lo]
    if not hosts:
        return None
    max_hi = max(windows[i][1] for i in hosts)
    for m in range(max(1, math.ceil(supply / max_hi)), len(hosts) + 1):
        chosen = hosts[:m]
        base, extra = divmod(supply, m)
        counts = [base + 1] * extra + [base] * (m - extra)
        if all(
            windows[i][0] <= c <= windows[i][1] for i, c in zip(chosen, counts)
        ):
            alloc = [0] * len(procs)
            for i, c in zip(chosen, counts):
                alloc[i] = c
            return alloc
    return None


def mimicry_plan(
    ransomware_trace: Trace,
    census: FileCensus,
    profile: BenignProfile,
    tolerance: float = 0.05,
    seed: int = 0,
) -> MimicryPlan:
    """Plan a mimicry split: per-process file assignment and dummy-op padding.

    The process count starts at ceil(distinct files / (file_access_fraction *
    census size)) and grows until every process's operation mix can be padded
    (dummy reads, low-entropy dummy writes on already-assigned files) to
    within tolerance of the profile ratio without breaking the file-access
    cap, and its projected average write entropy stays at or below the
    profile's mean plus tolerance.
    """
    ratio = profile.ratio
    if ratio.get(OpKind.RD, 0.0) <= 0 or ratio.get(OpKind.WT, 0.0) <= 0:
        raise DataError("profile cannot host encryption")
    present = {op for op, c in _main_op_counts(ransomware_trace).items() if c}
    unhosted = {op for op in present if ratio.get(op, 0.0) <= 0}
    if unhosted:
        names = ",".join(sorted(op.value for op in unhosted))
        raise DataError(f"profile cannot host operations: {names}")

    files = ransomware_trace.distinct_file_ids()
    if not files:
        raise DataError("trace touches no files; nothing to mimic")
    cap = profile.file_access_fraction * census.n_files
    if math.floor(cap + 1e-9) < 1:
        raise DataError("file-access cap below one file")
    by_file, ent_by_file, dl_supply = _per_file_stats(ransomware_trace)

    n0 = max(1, math.ceil(len(files) / cap))
    for n in range(n0, min(len(files), n0 + 4 * n0 + 64) + 1):
        plan = _try_mimicry(
            files, by_file, ent_by_file, dl_supply, n, cap, profile, tolerance, seed,
            len(ransomware_trace.events),
        )
        if plan is not None:
            return plan
    raise DataError("cannot satisfy profile ratio within tolerance")


def _try_mimicry(
    files: list[int],
    by_file: dict[int, dict[OpKind, int]],
    ent_by_file: dict[int, float],
    dl_supply: int,
    n: int,
    cap: float,
    profile: BenignProfile,
    tol: float,
    seed: int,
    n_input_events: int,
) -> MimicryPlan | None:
    if math.ceil(len(files) / n) > cap + 1e-9:
        return None
    ratio = profile.ratio
    procs: list[_ProcStats] = []
    for p in range(n):
        assigned = tuple(files[p::n])
        counts = {op: 0 for op in MAIN_OPS}
        ent = 0.0
        for fid in assigned:
            for op, c in by_file[fid].items():
                counts[op] += c
            ent += ent_by_file.get(fid, 0.0)
        procs.append(_ProcStats(files=assigned, counts=counts, wt_entropy_sum=ent))

    intervals = [_lambda_interval(ps.counts, ratio, tol) for ps in procs]
    if any(lo > hi for lo, hi in intervals):
        return None
    dl_alloc = _allocate_dl(procs, intervals, dl_supply, ratio.get(OpKind.DL, 0.0), tol)
    if dl_alloc is None:
        return None

    plans: list[ProcessPlan] = []
    for ps, (lo, hi), dl in zip(procs, intervals, dl_alloc):
        counts = dict(ps.counts)
        counts[OpKind.DL] += dl
        if dl:
            lo = max(lo, dl / (ratio[OpKind.DL] * (1.0 + tol)))
            hi = min(hi, dl / (ratio[OpKind.DL] * (1.0 - tol)))
            if lo > hi:
                return None
        anchor = max(
            counts[OpKind.RD] / ratio[OpKind.RD],
            counts[OpKind.WT] / ratio[OpKind.WT],
        )
        lam = min(max(anchor, lo), hi) if hi != math.inf else max(anchor, lo)
        if lam <= 0:
            return None
        targets: dict[OpKind, int] = {}
        for op in (OpKind.RD, OpKind.WT):
            w_lo, w_hi = _integer_window(lam, ratio[op], tol)
            target = min(max(round(lam * ratio[op]), w_lo, counts[op]), w_hi)
            if target < counts[op] or target < w_lo:
                return None
            targets[op] = target
        # dummy writes carry near-zero entropy; add more if the projected
        # average still exceeds the benign mean plus tolerance
        e_limit = profile.wt_entropy + tol
        wt_target = targets[OpKind.WT]
        projected = (
            ps.wt_entropy_sum
            + (wt_target - counts[OpKind.WT]) * DUMMY_WT_MAX_ENTROPY
        ) / max(1, wt_target)
        if projected > e_limit:
            if e_limit <= DUMMY_WT_MAX_ENTROPY:
                return None
            need = math.ceil(
                (ps.wt_entropy_sum - counts[OpKind.WT] * DUMMY_WT_MAX_ENTROPY)
                / (e_limit - DUMMY_WT_MAX_ENTROPY)
            )
            _, w_hi = _integer_window(lam, ratio[OpKind.WT], tol)
            if need > w_hi:
                return None
            wt_target = max(wt_target, need)
        dummy_rd = targets[OpKind.RD] - counts[OpKind.RD]
        dummy_wt = wt_target - counts[OpKind.WT]
        final = {
            OpKind.DL.value: counts[OpKind.DL],
            OpKind.RD.value: targets[OpKind.RD],
            OpKind.WT.value: wt_target,
            OpKind.RN.value: counts[OpKind.RN],
        }
        check = {op: final[op.value] for op in MAIN_OPS}
        if not ratio_conformant(check, ratio, tol):
            return None
        plans.append(
            ProcessPlan(
                file_ids=ps.files,
                dl_events=dl,
                dummy_rd=dummy_rd,
                dummy_wt=dummy_wt,
                final_counts=final,
            )
        )
    return MimicryPlan(
        profile=profile,
        tolerance=tol,
        per_process=tuple(plans),
        n_processes=n,
        seed=seed,
        n_input_events=n_input_events,
    )


def mimicry_split(trace: Trace, plan: MimicryPlan) -> list[Trace]:
    """Apply a mimicry plan: route real events and interleave dummy padding.

    Real events are conserved exactly (is_dummy stays False); dummy reads and
    low-entropy dummy writes target already-assigned files and are spread
    uniformly over each process's active time span.
    """
    if plan.n_input_events != len(trace.events):
        raise DataError("plan does not match trace: event count differs")
    assigned = sorted(fid for p in plan.per_process for fid in p.file_ids)
    if assigned != sorted(trace.distinct_file_ids()):
        raise DataError("plan does not match trace: file assignment differs")
    owner = {fid: p for p, pp in enumerate(plan.per_process) for fid in pp.file_ids}

    buckets: list[list[IrpEvent]] = [[] for _ in plan.per_process]
    dl_quota = [pp.dl_events for pp in plan.per_process]
    dl_host = 0
    agnostic = 0
    for e in trace.events:
        if e.file_id:
            buckets[owner[e.file_id]].append(e)
        elif e.op is OpKind.DL:
            while dl_host < len(dl_quota) and dl_quota[dl_host] == 0:
                dl_host += 1
            if dl_host >= len(dl_quota):
                raise DataError("plan does not match trace: too many listing events")
            buckets[dl_host].append(e)
            dl_quota[dl_host] -= 1
        else:
            buckets[agnostic % len(buckets)].append(e)
            agnostic += 1
    if any(q for q in dl_quota):
        raise DataError("plan does not match trace: too few listing events")

    span_lo = int(trace.events[0].ts_us) if trace.events else 0
    span_hi = int(trace.events[-1].ts_us) if trace.events else 0
    outputs: list[Trace] = []
    for p, (pp, real) in enumerate(zip(plan.per_process, buckets)):
        rng = np.random.default_rng([plan.seed, 7001, p])
        n_dummy = pp.dummy_rd + pp.dummy_wt
        dummies: list[IrpEvent] = []
        if n_dummy:
            lo = int(real[0].ts_us) if real else span_lo
            hi = int(real[-1].ts_us) if real else span_hi
            ts = np.sort(rng.integers(lo, hi + 1, size=n_dummy))
            kinds = [OpKind.RD] * pp.dummy_rd + [OpKind.WT] * pp.dummy_wt
            rng.shuffle(kinds)  # type: ignore[arg-type]
            for i, (t, op) in enumerate(zip(ts, kinds)):
                fid = pp.file_ids[i % len(pp.file_ids)]
                if op is OpKind.RD:
                    entropy = float(rng.uniform(0.0, 1.0))
                else:
                    entropy = float(rng.uniform(0.0, DUMMY_WT_MAX_ENTROPY))
                dummies.append(
                    IrpEvent(
                        ts_us=int(t),
                        pid=p,
                        op=op,
                        file_id=fid,
                        dir_id=0,
                        offset=0,
                        length=int(rng.integers(1, 4097)),
                        entropy=entropy,
                        preserves_magic=op is OpKind.WT,
                        is_dummy=True,
                    )
                )
        merged = sorted(real + dummies, key=lambda e: e.ts_us)
        out = Trace(tuple(replace(e, pid=p) for e in merged), RANSOMWARE)
        counts = _main_op_counts(out)
        if not ratio_conformant(counts, plan.profile.ratio, plan.tolerance):
            raise DataError(f"process {p} violates the profile ratio after padding")
        outputs.append(out)
    return outputs


# --------------------------------------------------------------------------
# split plan descriptors (replayable experiment inputs)


@dataclass(frozen=True)
class SplitPlan:
    """Serializable descriptor of one attack configuration."""

    kind: str  # process | functional | mimicry
    n: int = 1
    groups: tuple[frozenset[OpKind], ...] = ()
    per_group_n: tuple[int, ...] = ()
    mimicry: MimicryPlan | None = None

    def to_obj(self) -> dict:
        obj: dict = {"v": PLAN_VERSION, "kind": self.kind}
        if self.kind == "process":
            obj["n"] = self.n
        elif self.kind == "functional":
            obj["groups"] = [sorted(op.value for op in g) for g in self.groups]
            obj["per_group_n"] = list(self.per_group_n)
        elif self.kind == "mimicry":
            obj["mimicry"] = self.mimicry.to_obj() if self.mimicry else None
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "SplitPlan":
        if obj.get("v") != PLAN_VERSION:
            raise FormatError(f"plan: unsupported version {obj.get('v')!r}")
        kind = obj.get("kind")
        if kind == "process":
            return cls(kind="process", n=int(obj["n"]))
        if kind == "functional":
            groups = tuple(
                frozenset(OpKind(o) for o in g) for g in obj["groups"]
            )
            return cls(kind="functional", groups=groups,
                       per_group_n=tuple(int(x) for x in obj["per_group_n"]))
        if kind == "mimicry":
            mp = obj.get("mimicry")
            return cls(kind="mimicry", mimicry=MimicryPlan.from_obj(mp) if mp else None)
        raise FormatError(f"plan: unknown kind {kind!r}")


def save_plan(plan: SplitPlan, stream: IO[str] | str | Path) -> None:
    if isinstance(stream, (str, Path)):
        with Path(stream).open("w", encoding="utf-8") as fp:
            save_plan(plan, fp)
        return
    json.dump(plan.to_obj(), stream, sort_keys=True, indent=1)
    stream.write("\n")


def load_plan(stream: IO[str] | str | Path) -> SplitPlan:
    fp = Path(stream).open("r", encoding="utf-8") if isinstance(stream, (str, Path)) else stream
    close = fp is not stream
    try:
        obj = json.load(fp)
    except json.JSONDecodeError as exc:
        raise FormatError(f"plan: invalid JSON: {exc.msg}") from None
    finally:
        if close:
            fp.close()
    return SplitPlan.from_obj(obj)


# --------------------------------------------------------------------------
# iterative evasion search


@dataclass(frozen=True)
class MinNResult:
    n: int | None
    found: bool
    probes: dict[int, int]  # process count -> flagged outputs
    max_n: int


def min_n_search(
    detector,
    trace: Trace,
    splitter: Callable[[Trace, int], list[Trace]],
    max_n: int,
) -> MinNResult:
    """Smallest split width at which no output process is flagged.

    Doubles the process count until an evading width is found, then binary
    searches the bracket. Detection is assumed non-increasing in the split
    width for bracketing; if that fails to hold the returned width still
    evades, it is merely minimal among the probed widths only.
    """
    if max_n < 1:
        raise DataError("max_n must be >= 1")
    probes: dict[int, int] = {}

    def flagged(n: int) -> int:
        outputs = splitter(trace, n)
        verdicts = (
            detector.detect_many(outputs)
            if hasattr(detector, "detect_many")
            else [detector.detect(t) for t in outputs]
        )
        count = sum(v.malicious for v in verdicts)
        probes[n] = count
        return count

    if flagged(1) == 0:
        return MinNResult(n=1, found=True, probes=probes, max_n=max_n)
    lo = 1
    hi: int | None = None
    n = 2
    while n <= max_n:
        if flagged(n) == 0:
            hi = n
            break
        lo = n
        if n == max_n:
            break
        n = min(n * 2, max_n)
    if hi is None:
        return MinNResult(n=None, found=False, probes=probes, max_n=max_n)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if flagged(mid) == 0:
            hi = mid
        else:
            lo = mid
    return MinNResult(n=hi, found=True, probes=probes, max_n=max_n)
