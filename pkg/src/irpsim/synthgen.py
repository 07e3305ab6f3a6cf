"""Synthetic census, benign-process, and ransomware trace generation.

Benign traces follow empirical per-class statistics observed in desktop I/O
trace collections: each behavioral class is defined by the set of main
operations it performs, their relative ratio, mean read/write entropies, and
the mean fraction of filesystem files one process touches. Write entropy is
bimodal per event (low-entropy structured payloads vs incompressible
compressed payloads), mixed per trace so each class hits its mean.

Ransomware traces traverse the directory tree depth first and fully overwrite
every file (open, read, covering writes, rename, close) at a high event rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO

import numpy as np

from .errors import DataError, FormatError
from .trace import BENIGN, RANSOMWARE, FileCensus, FileInfo, IrpEvent, OpKind, Trace

CONFIG_VERSION = 1

# Per-class benign process statistics: share of processes in the class,
# DL:RD:WT:RN operation ratio, mean read/write entropy, and the mean percent
# of all filesystem files accessed by one process of the class.
BENIGN_CLASSES: tuple[dict, ...] = (
    {"ops": "DL,RD,WT,RN", "prevalence": 19.07, "ratio": (1, 16, 13, 1),
     "rd_entropy": 0.59, "wt_entropy": 0.46, "file_access_pct": 0.83},
    {"ops": "DL,RD", "prevalence": 18.37, "ratio": (1, 2, 0, 0),
     "rd_entropy": 0.52, "wt_entropy": 0.0, "file_access_pct": 0.17},
    {"ops": "RD,WT,RN", "prevalence": 16.35, "ratio": (0, 6, 20, 1),
     "rd_entropy": 0.53, "wt_entropy": 0.28, "file_access_pct": 0.22},
    {"ops": "RD", "prevalence": 11.44, "ratio": (0, 1, 0, 0),
     "rd_entropy": 0.46, "wt_entropy": 0.0, "file_access_pct": 0.03},
    {"ops": "DL,RD,WT", "prevalence": 7.60, "ratio": (3, 52, 1, 0),
     "rd_entropy": 0.57, "wt_entropy": 0.77, "file_access_pct": 0.17},
    {"ops": "RD,RN", "prevalence": 6.85, "ratio": (0, 2, 0, 1),
     "rd_entropy": 0.53, "wt_entropy": 0.0, "file_access_pct": 0.02},
    {"ops": "RN", "prevalence": 6.21, "ratio": (0, 0, 0, 1),
     "rd_entropy": 0.0, "wt_entropy": 0.0, "file_access_pct": 0.03},
    {"ops": "RD,WT", "prevalence": 5.61, "ratio": (0, 5, 1, 0),
     "rd_entropy": 0.29, "wt_entropy": 0.57, "file_access_pct": 1.33},
    {"ops": "DL", "prevalence": 3.55, "ratio": (1, 0, 0, 0),
     "rd_entropy": 0.0, "wt_entropy": 0.0, "file_access_pct": 0.0},
    {"ops": "WT,RN", "prevalence": 2.18, "ratio": (0, 0, 5, 1),
     "rd_entropy": 0.0, "wt_entropy": 0.47, "file_access_pct": 0.02},
    {"ops": "DL,RD,RN", "prevalence": 1.76, "ratio": (8, 39, 0, 1),
     "rd_entropy": 0.42, "wt_entropy": 0.0, "file_access_pct": 0.09},
    {"ops": "WT", "prevalence": 0.42, "ratio": (0, 0, 1, 0),
     "rd_entropy": 0.0, "wt_entropy": 0.42, "file_access_pct": 0.60},
    {"ops": "DL,RN", "prevalence": 0.38, "ratio": (45, 0, 0, 1),
     "rd_entropy": 0.0, "wt_entropy": 0.0, "file_access_pct": 0.06},
    {"ops": "DL,WT", "prevalence": 0.13, "ratio": (2, 0, 1, 0),
     "rd_entropy": 0.0, "wt_entropy": 0.51, "file_access_pct": 0.01},
    {"ops": "DL,WT,RN", "prevalence": 0.08, "ratio": (1, 0, 8, 2),
     "rd_entropy": 0.0, "wt_entropy": 0.39, "file_access_pct": 0.03},
)

BENIGN_WT_ENTROPY_MEAN = 0.4825
RANSOMWARE_WT_ENTROPY_MEAN = 0.88

DEFAULT_EXT_MIX = {
    ".jpg": 0.20, ".pdf": 0.14, ".docx": 0.12, ".txt": 0.12, ".png": 0.10,
    ".xlsx": 0.08, ".log": 0.08, ".csv": 0.06, ".pptx": 0.05, ".zip": 0.05,
}

_MAIN = (OpKind.DL, OpKind.RD, OpKind.WT, OpKind.RN)
_FAST_OF = {OpKind.RD: OpKind.FRD, OpKind.WT: OpKind.FWT,
            OpKind.OP: OpKind.FOP, OpKind.CL: OpKind.FCL}


@dataclass(frozen=True)
class GenConfig:
    """Knobs for census and trace generation; fully determined by seed."""

    n_files: int = 3000
    n_dirs: int = 150
    ext_mix: dict = field(default_factory=lambda: dict(DEFAULT_EXT_MIX))
    n_benign: int = 2000
    n_ransomware: int = 50
    benign_class_mix: dict = field(
        default_factory=lambda: {c["ops"]: c["prevalence"] for c in BENIGN_CLASSES}
    )
    # log-normal per-trace main-op volume
    ops_median: float = 2000.0
    ops_sigma: float = 0.8
    # write/read payload entropy: per-event bimodal mixture whose per-trace
    # weight is beta-jittered around the class mean
    entropy_low_mode: float = 0.05
    entropy_high_mode: float = 0.95
    entropy_concentration: float = 50.0
    entropy_trace_concentration: float = 1.0
    ransomware_wt_entropy: float = RANSOMWARE_WT_ENTROPY_MEAN
    ransomware_trace_entropy_concentration: float = 1200.0
    # share of benign traces that touch their working set up front, then work
    # on it; the rest interleave file touches through the whole session
    scan_fraction: float = 0.65
    # work-phase ops arrive in homogeneous runs; a small share of runs is very
    # long (bulk renames, batch reads), which real applications exhibit
    burst_mean: float = 12.0
    burst_heavy_mean: float = 160.0
    burst_heavy_share: float = 0.25
    fast_share_benign: float = 0.3
    fast_share_ransomware: float = 0.6
    session_us: int = 60_000_000
    ransomware_ops_per_s: float = 2000.0
    file_size_median: int = 65536
    file_size_sigma: float = 1.0
    wt_chunk_bytes: int = 1_048_576
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.n_files >= self.n_dirs >= 1):
            raise ValueError("need n_files >= n_dirs >= 1")
        if abs(sum(self.ext_mix.values()) - 1.0) > 1e-9:
            raise ValueError("ext_mix probabilities must sum to 1")
        if not self.benign_class_mix:
            raise ValueError("benign_class_mix is empty")

    def to_obj(self) -> dict:
        obj = {"v": CONFIG_VERSION}
        for name in self.__dataclass_fields__:
            obj[name] = getattr(self, name)
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "GenConfig":
        if obj.get("v", CONFIG_VERSION) != CONFIG_VERSION:
            raise FormatError(f"config: unsupported version {obj.get('v')!r}")
        kwargs = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"config: {exc}") from None


def save_config(config: GenConfig, stream: IO[str] | str | Path) -> None:
    if isinstance(stream, (str, Path)):
        with Path(stream).open("w", encoding="utf-8") as fp:
            save_config(config, fp)
        return
    json.dump(config.to_obj(), stream, sort_keys=True, indent=1)
    stream.write("\n")


def load_config(stream: IO[str] | str | Path) -> GenConfig:
    fp = Path(stream).open("r", encoding="utf-8") if isinstance(stream, (str, Path)) else stream
    close = fp is not stream
    try:
        obj = json.load(fp)
    except json.JSONDecodeError as exc:
        raise FormatError(f"config: invalid JSON: {exc.msg}") from None
    finally:
        if close:
            fp.close()
    return GenConfig.from_obj(obj)


def _class_stats() -> dict[str, dict]:
    return {c["ops"]: c for c in BENIGN_CLASSES}


def _beta(rng: np.random.Generator, mean: float, conc: float, size=None):
    mean = min(max(mean, 1e-4), 1.0 - 1e-4)
    return rng.beta(mean * conc, (1.0 - mean) * conc, size=size)


def _mixture_weight(mean: float, low: float, high: float) -> float:
    return min(1.0, max(0.0, (mean - low) / (high - low)))


def _entropies(
    rng: np.random.Generator, n: int, p_high: float, config: GenConfig
) -> np.ndarray:
    """Per-event payload entropies: bimodal low/high mixture."""
    hi = _beta(rng, config.entropy_high_mode, config.entropy_concentration, n)
    lo = _beta(rng, config.entropy_low_mode, config.entropy_concentration, n)
    pick = rng.random(n) < p_high
    return np.where(pick, hi, lo)


def gen_census(config: GenConfig) -> FileCensus:
    """Deterministic synthetic filesystem: a directory tree plus files.

    Folders are mostly extension-homogeneous (photo folders, document
    folders), the way user filesystems are organized; the marginal extension
    mix still matches ext_mix exactly in expectation.
    """
    rng = np.random.default_rng([config.seed, 0])
    dirs: dict[int, int | None] = {0: None}
    for d in range(1, config.n_dirs):
        dirs[d] = int(rng.integers(0, d))
    exts = sorted(config.ext_mix)
    probs = np.array([config.ext_mix[x] for x in exts])
    probs = probs / probs.sum()
    dominant = rng.choice(len(exts), size=config.n_dirs, p=probs)
    sizes = np.rint(
        rng.lognormal(math.log(config.file_size_median), config.file_size_sigma, config.n_files)
    ).astype(np.int64)
    sizes = np.maximum(sizes, 16)
    dir_pick = rng.integers(0, config.n_dirs, size=config.n_files)
    own_ext = rng.random(config.n_files) < 0.8
    stray = rng.choice(len(exts), size=config.n_files, p=probs)
    files = {}
    for i, fid in enumerate(range(1, config.n_files + 1)):
        e = dominant[dir_pick[i]] if own_ext[i] else stray[i]
        files[fid] = FileInfo(ext=exts[int(e)], size=int(sizes[i]), dir_id=int(dir_pick[i]))
    return FileCensus(files=files, dirs=dirs)


# --------------------------------------------------------------------------
# benign traces


def _pick_coherent_files(census: FileCensus, budget: int, rng: np.random.Generator) -> list[int]:
    """Budget files drawn directory by directory, like an app working a folder."""
    by_dir: dict[int, list[int]] = {}
    for fid, info in census.files.items():
        by_dir.setdefault(info.dir_id, []).append(fid)
    order = rng.permutation(sorted(by_dir))
    picked: list[int] = []
    for d in order:
        for fid in sorted(by_dir[int(d)]):
            picked.append(fid)
            if len(picked) == budget:
                return picked
    return picked


def _op_counts(
    rng: np.random.Generator, cls: dict, volume: int, budget: int
) -> dict[OpKind, int]:
    weights = np.array(cls["ratio"], dtype=np.float64)
    probs = weights / weights.sum()
    # ops inside one process are structurally coupled (edits pair reads with
    # writes), so only part of the volume disperses multinomially
    base = np.floor(volume * probs * 0.85).astype(np.int64)
    counts = base + rng.multinomial(volume - int(base.sum()), probs)
    out: dict[OpKind, int] = {}
    for op, w, c in zip(_MAIN, weights, counts):
        if w > 0:
            out[op] = max(1, int(c))
    # every working-set file needs at least one touch
    file_ops = [op for op in (OpKind.RD, OpKind.WT, OpKind.RN) if op in out]
    if file_ops and budget:
        supply = sum(out[op] for op in file_ops)
        if supply < budget:
            dominant = max(file_ops, key=lambda op: out[op])
            out[dominant] += budget - supply
    return out


def _sample_class(rng: np.random.Generator, config: GenConfig) -> dict:
    stats = _class_stats()
    names = sorted(config.benign_class_mix)
    probs = np.array([config.benign_class_mix[n] for n in names], dtype=np.float64)
    probs = probs / probs.sum()
    name = names[int(rng.choice(len(names), p=probs))]
    if name not in stats:
        raise DataError(f"unknown benign class {name!r}")
    return stats[name]


def _burst_lengths(
    rng: np.random.Generator, total: int, mean: float,
    heavy_mean: float = 0.0, heavy_share: float = 0.0,
) -> list[int]:
    out = []
    left = total
    while left > 0:
        m = heavy_mean if (heavy_mean and rng.random() < heavy_share) else mean
        n = min(left, 1 + int(rng.geometric(1.0 / max(1.5, m))))
        out.append(n)
        left -= n
    return out


def gen_benign(census: FileCensus, config: GenConfig) -> list[Trace]:
    """n_benign traces; each trace's randomness depends only on (seed, index)."""
    return [gen_benign_trace(census, config, i) for i in range(config.n_benign)]


def gen_benign_trace(census: FileCensus, config: GenConfig, index: int) -> Trace:
    rng = np.random.default_rng([config.seed, 1, index])
    cls = _sample_class(rng, config)
    class_ops = {OpKind(o) for o in cls["ops"].split(",")}
    file_ops = class_ops & {OpKind.RD, OpKind.WT, OpKind.RN}

    budget = 0
    if file_ops:
        noisy = cls["file_access_pct"] / 100.0 * census.n_files * rng.uniform(0.8, 1.2)
        budget = max(1, int(round(noisy)))
        budget = min(budget, census.n_files)
    scan = bool(rng.random() < config.scan_fraction)
    # half the processes work folder by folder, half on a scattered set
    # (mail stores, sync clients); orthogonal to front-loading
    if budget:
        if rng.random() < 0.5:
            files = _pick_coherent_files(census, budget, rng)
        else:
            files = [int(f) for f in rng.choice(
                sorted(census.files), size=budget, replace=False)]
    else:
        files = []

    volume = int(round(rng.lognormal(math.log(config.ops_median), config.ops_sigma)))
    volume = max(volume, 2 * budget + len(class_ops))
    counts = _op_counts(rng, cls, volume, budget)

    ops_seq = _assemble_benign(rng, config, census, counts, files, scan)
    ops_seq = _bracket_and_fast(rng, ops_seq, config.fast_share_benign)

    p_hi_wt = _trace_mix_weight(rng, cls["wt_entropy"], config)
    p_hi_rd = _trace_mix_weight(rng, cls["rd_entropy"], config)
    events = _materialize(rng, census, ops_seq, config.session_us, p_hi_rd, p_hi_wt, config)
    return Trace.from_events(events, BENIGN)


def _trace_mix_weight(rng: np.random.Generator, mean: float, config: GenConfig) -> float:
    if mean <= 0:
        return 0.0
    p = _mixture_weight(mean, config.entropy_low_mode, config.entropy_high_mode)
    return float(_beta(rng, p, config.entropy_trace_concentration))


def _assemble_benign(
    rng: np.random.Generator,
    config: GenConfig,
    census: FileCensus,
    counts: dict[OpKind, int],
    files: list[int],
    scan: bool,
) -> list[tuple[OpKind, int, int]]:
    """Ordered (op, file_id, dir_id) triples for the main operations.

    Scan traces visit each working-set file once with a compact touch unit,
    then spend the remaining operation budget in bursts on files they already
    touched; interleaved traces spread first touches through the session.
    """
    left = dict(counts)
    dir_ids = sorted(census.dirs)
    seq: list[tuple[OpKind, int, int]] = []
    dir_of = {fid: census.files[fid].dir_id for fid in files}

    def dl_event() -> tuple[OpKind, int, int]:
        return (OpKind.DL, 0, int(rng.choice(dir_ids)))

    units: list[list[tuple[OpKind, int, int]]] = []
    if files:
        # compact per-file touch unit, listings sprinkled at directory
        # granularity; renaming classes use the safe-save ritual (read,
        # write, rename), others thin low-weight ops toward the class ratio
        ratios = {op: counts.get(op, 0) for op in (OpKind.RD, OpKind.WT, OpKind.RN)}
        peak = max(ratios.values()) if any(ratios.values()) else 1
        safe_save = counts.get(OpKind.RN, 0) > 0
        dl_every = max(1, len(census.files) // max(1, len(census.dirs)))
        dl_phase = int(rng.integers(0, dl_every))
        for k, fid in enumerate(files):
            unit: list[tuple[OpKind, int, int]] = []
            if left.get(OpKind.DL, 0) > 0 and k % dl_every == dl_phase:
                unit.append((OpKind.DL, 0, dir_of[fid]))
                left[OpKind.DL] -= 1
            for op in (OpKind.RD, OpKind.WT, OpKind.RN):
                if left.get(op, 0) <= 0:
                    continue
                if not safe_save and ratios[op] < peak:
                    if rng.random() > min(1.0, 2.0 * ratios[op] / peak):
                        continue
                unit.append((op, fid, dir_of[fid]))
                left[op] -= 1
            if unit:
                units.append(unit)
    seq = [e for u in units for e in u] if scan else []

    # remaining volume in homogeneous bursts; a burst walks a run of
    # working-set files (batch reads, bulk renames) rather than one file
    bursts: list[list[tuple[OpKind, int, int]]] = []
    for op in (OpKind.DL, OpKind.RD, OpKind.WT, OpKind.RN):
        n = left.get(op, 0)
        if n <= 0:
            continue
        lengths = _burst_lengths(rng, n, config.burst_mean,
                                 config.burst_heavy_mean, config.burst_heavy_share)
        for blen in lengths:
            if op is OpKind.DL:
                bursts.append([dl_event() for _ in range(blen)])
            elif files:
                start = int(rng.integers(0, len(files)))
                span = blen if rng.random() < 0.5 else max(1, blen // 4)
                burst = []
                for j in range(blen):
                    fid = files[(start + j % span) % len(files)]
                    burst.append((op, fid, dir_of[fid]))
                bursts.append(burst)

    if scan:
        # front-load the working-set walk, then burst over it
        order = rng.permutation(len(bursts))
        merged = seq + [e for i in order for e in bursts[int(i)]]
    else:
        # interleave per-file units and bursts across the whole session
        pieces = units + bursts
        order = rng.permutation(len(pieces))
        merged = [e for i in order for e in pieces[int(i)]]
    return merged


def _bracket_and_fast(
    rng: np.random.Generator,
    seq: list[tuple[OpKind, int, int]],
    fast_share: float,
) -> list[tuple[OpKind, int, int]]:
    """Insert OP at first touch and CL after last touch, then fast variants.

    Fast-variant counts are a fixed share of their base operation's count,
    attached immediately after randomly chosen base events.
    """
    first: dict[int, int] = {}
    last: dict[int, int] = {}
    for i, (_, fid, _) in enumerate(seq):
        if fid:
            if fid not in first:
                first[fid] = i
            last[fid] = i
    out: list[tuple[OpKind, int, int]] = []
    for i, item in enumerate(seq):
        _, fid, did = item
        if fid and first.get(fid) == i:
            out.append((OpKind.OP, fid, did))
        out.append(item)
        if fid and last.get(fid) == i:
            out.append((OpKind.CL, fid, did))

    base_positions: dict[OpKind, list[int]] = {}
    for i, (op, _, _) in enumerate(out):
        if op in _FAST_OF:
            base_positions.setdefault(op, []).append(i)
    inserts: dict[int, tuple[OpKind, int, int]] = {}
    for op, positions in sorted(base_positions.items(), key=lambda kv: kv[0].value):
        n_fast = int(round(fast_share * len(positions)))
        if n_fast == 0:
            continue
        chosen = rng.choice(len(positions), size=n_fast, replace=False)
        for c in sorted(int(x) for x in chosen):
            i = positions[c]
            _, fid, did = out[i]
            inserts[i] = (_FAST_OF[op], fid, did)
    final: list[tuple[OpKind, int, int]] = []
    for i, item in enumerate(out):
        final.append(item)
        if i in inserts:
            final.append(inserts[i])
    return final


def _materialize(
    rng: np.random.Generator,
    census: FileCensus,
    seq: list[tuple[OpKind, int, int]],
    duration_us: int,
    p_hi_rd: float,
    p_hi_wt: float,
    config: GenConfig,
    full_overwrite: bool = False,
    magic_change: bool = False,
) -> list[IrpEvent]:
    """Attach timestamps, offsets, lengths, and entropies to an op sequence."""
    n = len(seq)
    if n == 0:
        return []
    ts = np.sort(rng.integers(0, max(1, duration_us), size=n))
    n_rd = sum(1 for op, _, _ in seq if op is OpKind.RD)
    n_wt = sum(1 for op, _, _ in seq if op is OpKind.WT)
    rd_ent = _entropies(rng, n_rd, p_hi_rd, config)
    wt_ent = _entropies(rng, n_wt, p_hi_wt, config)
    events: list[IrpEvent] = []
    i_rd = i_wt = 0
    write_cursor: dict[int, int] = {}
    for i, (op, fid, did) in enumerate(seq):
        offset = length = None
        entropy = None
        magic = False
        if op is OpKind.RD:
            size = census.files[fid].size if fid else 4096
            offset = 0
            length = size
            entropy = float(rd_ent[i_rd])
            i_rd += 1
        elif op is OpKind.WT:
            size = census.files[fid].size if fid else 4096
            if full_overwrite:
                # covering writes tile the file in chunk-sized pieces
                cur = write_cursor.get(fid, 0) % max(1, size)
                offset = cur
                length = min(config.wt_chunk_bytes, size - cur)
                write_cursor[fid] = cur + length
                magic = not magic_change and offset == 0
            else:
                offset = int(rng.integers(0, size))
                length = int(min(size - offset, rng.integers(1, 262145)))
                magic = offset == 0
            entropy = float(wt_ent[i_wt])
            i_wt += 1
        events.append(
            IrpEvent(
                ts_us=int(ts[i]),
                pid=0,
                op=op,
                file_id=fid,
                dir_id=did,
                offset=offset,
                length=max(1, length) if length is not None else None,
                entropy=entropy,
                preserves_magic=magic,
            )
        )
    return events


# --------------------------------------------------------------------------
# ransomware traces


def gen_ransomware(census: FileCensus, config: GenConfig, index: int = 0) -> Trace:
    """A single-process trace that encrypts the whole census.

    Depth-first directory traversal, one listing per directory; every file is
    opened, read in full, fully overwritten with high-entropy chunks (type
    signature not preserved), renamed, and closed, at a dense event rate.
    """
    rng = np.random.default_rng([config.seed, 2, index])
    children: dict[int, list[int]] = {d: [] for d in census.dirs}
    for d, parent in census.dirs.items():
        if parent is not None:
            children[parent].append(d)
    by_dir: dict[int, list[int]] = {d: [] for d in census.dirs}
    for fid, info in sorted(census.files.items()):
        by_dir[info.dir_id].append(fid)

    # every sample walks the tree in its own order, as real families do
    seq: list[tuple[OpKind, int, int]] = []
    stack = [0]
    while stack:
        d = stack.pop()
        seq.append((OpKind.DL, 0, d))
        files = list(by_dir[d])
        rng.shuffle(files)
        for fid in files:
            size = census.files[fid].size
            n_chunks = max(1, math.ceil(size / config.wt_chunk_bytes))
            seq.append((OpKind.RD, fid, d))
            for _ in range(n_chunks):
                seq.append((OpKind.WT, fid, d))
            seq.append((OpKind.RN, fid, d))
        kids = sorted(children[d])
        order = rng.permutation(len(kids))
        stack.extend(kids[int(i)] for i in order)

    seq = _bracket_and_fast(rng, seq, config.fast_share_ransomware)
    duration_us = max(1, int(len(seq) / config.ransomware_ops_per_s * 1e6))
    p_hi_wt = _mixture_weight(
        config.ransomware_wt_entropy, config.entropy_low_mode, config.entropy_high_mode
    )
    p_hi_wt = float(_beta(rng, p_hi_wt, config.ransomware_trace_entropy_concentration))
    p_hi_rd = _mixture_weight(0.59, config.entropy_low_mode, config.entropy_high_mode)
    events = _materialize(
        rng, census, seq, duration_us, p_hi_rd, p_hi_wt, config,
        full_overwrite=True, magic_change=True,
    )
    return Trace.from_events(events, RANSOMWARE)


def gen_ransomware_set(census: FileCensus, config: GenConfig) -> list[Trace]:
    return [gen_ransomware(census, config, i) for i in range(config.n_ransomware)]
