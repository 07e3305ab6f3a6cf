"""Event/trace data model, filesystem census, entropy, and (de)serialization.

A trace is the ordered sequence of I/O request records emitted by one
process: one record per low-level file-system operation, carrying only the
scalar attributes the behavioral detectors consume (counts, offsets,
normalized payload entropy). No file content is ever stored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import FormatError

FORMAT_VERSION = 1

BENIGN = "benign"
RANSOMWARE = "ransomware"
LABELS = (BENIGN, RANSOMWARE)


class OpKind(str, Enum):
    """Low-level file-system operation kinds.

    Fast variants (FRD, FWT, FOP, FCL) are distinct operations issued through
    the fast I/O path; they are never inferred from timing.
    """

    DL = "DL"  # directory listing
    RD = "RD"  # read
    WT = "WT"  # write
    RN = "RN"  # rename
    OP = "OP"  # open
    CL = "CL"  # close
    FRD = "FRD"  # fast read
    FWT = "FWT"  # fast write
    FOP = "FOP"  # fast open
    FCL = "FCL"  # fast close
    CREATE = "CREATE"
    DELETE = "DELETE"


# Operations that transfer payload bytes and therefore carry offset/length/entropy.
DATA_OPS = frozenset({OpKind.RD, OpKind.WT})

# The four high-level operations behavioral profiles are expressed over.
MAIN_OPS = (OpKind.DL, OpKind.RD, OpKind.WT, OpKind.RN)

DUMMY_WT_MAX_ENTROPY = 0.05


@dataclass(frozen=True, slots=True)
class IrpEvent:
    """One timestamped I/O operation performed by one process.

    file_id 0 means the event does not target a file (directory listings
    target dir_id instead). offset/length/entropy are present only for data
    ops (RD/WT); entropy is the normalized Shannon entropy of the payload.
    """

    ts_us: int
    pid: int
    op: OpKind
    file_id: int = 0
    dir_id: int = 0
    offset: int | None = None
    length: int | None = None
    entropy: float | None = None
    preserves_magic: bool = False
    is_dummy: bool = False

    def to_obj(self) -> dict:
        obj: dict = {
            "ts_us": self.ts_us,
            "pid": self.pid,
            "op": self.op.value,
            "file_id": self.file_id,
            "dir_id": self.dir_id,
        }
        if self.offset is not None:
            obj["offset"] = self.offset
        if self.length is not None:
            obj["length"] = self.length
        if self.entropy is not None:
            obj["entropy"] = self.entropy
        if self.preserves_magic:
            obj["preserves_magic"] = True
        if self.is_dummy:
            obj["is_dummy"] = True
        return obj

    @classmethod
    def from_obj(cls, obj: dict, where: str = "event") -> "IrpEvent":
        if not isinstance(obj, dict):
            raise FormatError(f"{where}: expected an object")
        try:
            op = OpKind(obj["op"])
        except (KeyError, ValueError):
            raise FormatError(f"{where}: unknown op {obj.get('op')!r}") from None
        try:
            ev = cls(
                ts_us=int(obj["ts_us"]),
                pid=int(obj["pid"]),
                op=op,
                file_id=int(obj.get("file_id") or 0),
                dir_id=int(obj.get("dir_id") or 0),
                offset=None if obj.get("offset") is None else int(obj["offset"]),
                length=None if obj.get("length") is None else int(obj["length"]),
                entropy=None if obj.get("entropy") is None else float(obj["entropy"]),
                preserves_magic=bool(obj.get("preserves_magic", False)),
                is_dummy=bool(obj.get("is_dummy", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{where}: {exc}") from None
        if ev.ts_us < 0:
            raise FormatError(f"{where}: negative ts_us")
        if ev.entropy is not None and not 0.0 <= ev.entropy <= 1.0:
            raise FormatError(f"{where}: entropy {ev.entropy} outside [0,1]")
        return ev


@dataclass(frozen=True)
class Trace:
    """An immutable, time-ordered sequence of events with a ground-truth label."""

    events: tuple[IrpEvent, ...]
    label: str = BENIGN

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")

    @classmethod
    def from_events(cls, events: Iterable[IrpEvent], label: str = BENIGN) -> "Trace":
        """Build a trace, sorting events by ts_us (stable: ties keep input order)."""
        ordered = tuple(sorted(events, key=lambda e: e.ts_us))
        return cls(events=ordered, label=label)

    @property
    def source_pid_set(self) -> frozenset[int]:
        return frozenset(e.pid for e in self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[IrpEvent]:
        return iter(self.events)

    def with_pid(self, pid: int) -> "Trace":
        """Copy of this trace with every event renumbered to the given pid."""
        return Trace(tuple(replace(e, pid=pid) for e in self.events), self.label)

    def distinct_file_ids(self) -> list[int]:
        """Distinct nonzero file ids in first-access order."""
        seen: dict[int, None] = {}
        for e in self.events:
            if e.file_id and e.file_id not in seen:
                seen[e.file_id] = None
        return list(seen)


@dataclass(frozen=True, slots=True)
class FileInfo:
    ext: str
    size: int
    dir_id: int


@dataclass(frozen=True)
class FileCensus:
    """The simulated filesystem: file ids, extensions, sizes, directory tree.

    dirs maps dir_id to parent dir_id (None for the root, which is dir 0).
    totals (per-extension file counts) is derived from the files map.
    """

    files: dict[int, FileInfo]
    dirs: dict[int, int | None]
    totals: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        recomputed: dict[str, int] = {}
        for info in self.files.values():
            recomputed[info.ext] = recomputed.get(info.ext, 0) + 1
        object.__setattr__(self, "totals", recomputed)
        if not self.files:
            raise ValueError("census must contain at least one file")
        self._check_tree()

    def _check_tree(self) -> None:
        if self.dirs.get(0, "missing") is not None:
            raise ValueError("directory tree must be rooted at dir_id 0")
        for d in self.dirs:
            seen = set()
            node: int | None = d
            while node is not None and node != 0:
                if node in seen or node not in self.dirs:
                    raise ValueError(f"directory {d} does not reach root 0")
                seen.add(node)
                node = self.dirs[node]

    @property
    def n_files(self) -> int:
        return len(self.files)


def shannon_entropy(byte_histogram: Iterable[int]) -> float:
    """Normalized Shannon entropy of a 256-bin byte histogram.

    Returns H/8 with H = -sum(p_i * log2(p_i)) over nonzero byte
    probabilities, so the result lies in [0, 1].
    """
    counts = list(byte_histogram)
    if len(counts) != 256:
        raise ValueError(f"expected 256 histogram bins, got {len(counts)}")
    total = sum(counts)
    if total <= 0:
        raise ValueError("empty payload")
    h = 0.0
    for c in counts:
        if c < 0:
            raise ValueError("negative histogram count")
        if c:
            p = c / total
            h -= p * math.log2(p)
    return min(1.0, h / 8.0)


def _open_lines(stream: IO[str] | str | Path) -> Iterable[str] | IO[str]:
    if isinstance(stream, (str, Path)):
        return Path(stream).open("r", encoding="utf-8")
    return stream


def load_trace(stream: IO[str] | str | Path) -> Trace:
    """Parse a JSONL trace stream into a validated, time-sorted Trace.

    The first nonempty line may be a version header {"v": 1, "label": ...};
    headerless streams are accepted and default to the benign label. Raises
    FormatError naming the offending line on any malformed record.
    """
    fp = _open_lines(stream)
    close = fp is not stream
    label = BENIGN
    events: list[IrpEvent] = []
    saw_header = False
    try:
        for lineno, raw in enumerate(fp, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {lineno}: invalid JSON: {exc.msg}") from None
            if not saw_header and not events and isinstance(obj, dict) and "v" in obj:
                saw_header = True
                if obj["v"] != FORMAT_VERSION:
                    raise FormatError(f"line {lineno}: unsupported trace version {obj['v']!r}")
                label = obj.get("label", BENIGN)
                if label not in LABELS:
                    raise FormatError(f"line {lineno}: unknown label {label!r}")
                continue
            events.append(IrpEvent.from_obj(obj, where=f"line {lineno}"))
    finally:
        if close:
            fp.close()  # type: ignore[union-attr]
    return Trace.from_events(events, label)


def save_trace(trace: Trace, stream: IO[str] | str | Path) -> None:
    """Write a trace as versioned JSONL; load_trace(save_trace(t)) == t."""
    if isinstance(stream, (str, Path)):
        with Path(stream).open("w", encoding="utf-8") as fp:
            save_trace(trace, fp)
        return
    stream.write(json.dumps({"v": FORMAT_VERSION, "label": trace.label}) + "\n")
    for e in trace.events:
        stream.write(json.dumps(e.to_obj(), sort_keys=True) + "\n")


def save_census(census: FileCensus, stream: IO[str] | str | Path) -> None:
    if isinstance(stream, (str, Path)):
        with Path(stream).open("w", encoding="utf-8") as fp:
            save_census(census, fp)
        return
    obj = {
        "v": FORMAT_VERSION,
        "files": [
            {"id": fid, "ext": info.ext, "size": info.size, "dir": info.dir_id}
            for fid, info in sorted(census.files.items())
        ],
        "dirs": [{"id": d, "parent": p} for d, p in sorted(census.dirs.items())],
    }
    json.dump(obj, stream, sort_keys=True)
    stream.write("\n")


def load_census(stream: IO[str] | str | Path) -> FileCensus:
    fp = _open_lines(stream)
    close = fp is not stream
    try:
        obj = json.load(fp)  # type: ignore[arg-type]
    except json.JSONDecodeError as exc:
        raise FormatError(f"census: invalid JSON: {exc.msg}") from None
    finally:
        if close:
            fp.close()  # type: ignore[union-attr]
    if not isinstance(obj, dict) or obj.get("v") != FORMAT_VERSION:
        raise FormatError(f"census: unsupported version {obj.get('v')!r}")
    try:
        files = {
            int(f["id"]): FileInfo(ext=str(f["ext"]), size=int(f["size"]), dir_id=int(f["dir"]))
            for f in obj["files"]
        }
        dirs = {
            int(d["id"]): (None if d["parent"] is None else int(d["parent"]))
            for d in obj["dirs"]
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"census: {exc}") from None
    try:
        return FileCensus(files=files, dirs=dirs)
    except ValueError as exc:
        raise FormatError(f"census: {exc}") from None


def validate_trace(trace: Trace, census: FileCensus) -> list[str]:
    """Check every trace and event invariant against a census.

    Returns a list of human-readable violations; an empty list means the
    trace is clean. Violations are data, not errors: nothing raises.
    """
    violations: list[str] = []
    if trace.label not in LABELS:
        violations.append(f"unknown label {trace.label!r}")
    last_ts = None
    for i, e in enumerate(trace.events):
        where = f"event {i}"
        if e.ts_us < 0:
            violations.append(f"{where}: negative ts_us")
        if last_ts is not None and e.ts_us < last_ts:
            violations.append(f"{where}: events not sorted by ts_us")
        last_ts = e.ts_us
        if e.op in DATA_OPS:
            if e.length is None or e.length < 1:
                violations.append(f"{where}: {e.op.value} requires length >= 1")
            if e.offset is None or e.offset < 0:
                violations.append(f"{where}: {e.op.value} requires offset >= 0")
            if e.entropy is None:
                violations.append(f"{where}: {e.op.value} missing entropy")
            elif not 0.0 <= e.entropy <= 1.0:
                violations.append(f"{where}: entropy out of range ({e.entropy})")
        else:
            if e.offset is not None or e.length is not None or e.entropy is not None:
                violations.append(f"{where}: {e.op.value} must not carry payload fields")
        if e.is_dummy:
            if e.op not in DATA_OPS:
                violations.append(f"{where}: dummy op must be RD or WT")
            elif e.op is OpKind.WT and e.entropy is not None and e.entropy > DUMMY_WT_MAX_ENTROPY:
                violations.append(
                    f"{where}: dummy write entropy {e.entropy} exceeds {DUMMY_WT_MAX_ENTROPY}"
                )
        if e.file_id:
            if e.file_id not in census.files:
                violations.append(f"{where}: unknown file_id {e.file_id}")
        if e.dir_id and e.dir_id not in census.dirs:
            violations.append(f"{where}: unknown dir_id {e.dir_id}")
    return violations
