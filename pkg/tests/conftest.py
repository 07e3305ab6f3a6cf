from __future__ import annotations

import pytest

from irpsim.trace import FileCensus, FileInfo, IrpEvent, OpKind, Trace


def make_census(n_files: int = 10, exts: tuple[str, ...] = (".docx", ".log"), n_dirs: int = 2) -> FileCensus:
    dirs: dict[int, int | None] = {0: None}
    for d in range(1, n_dirs):
        dirs[d] = 0
    files = {
        fid: FileInfo(ext=exts[(fid - 1) % len(exts)], size=4096 * fid, dir_id=(fid - 1) % n_dirs)
        for fid in range(1, n_files + 1)
    }
    return FileCensus(files=files, dirs=dirs)


def ev(ts, op, fid=0, dir_id=0, pid=0, **kw) -> IrpEvent:
    if op in (OpKind.RD, OpKind.WT):
        kw.setdefault("offset", 0)
        kw.setdefault("length", 100)
        kw.setdefault("entropy", 0.5)
    return IrpEvent(ts_us=ts, pid=pid, op=op, file_id=fid, dir_id=dir_id, **kw)


@pytest.fixture
def census10() -> FileCensus:
    return make_census()


@pytest.fixture
def rw_trace(census10) -> Trace:
    """A miniature full-coverage encryption-style trace over census10."""
    events = []
    ts = 0
    for fid in sorted(census10.files):
        info = census10.files[fid]
        for op in (OpKind.OP, OpKind.RD, OpKind.WT, OpKind.RN, OpKind.CL):
            kw = {}
            if op in (OpKind.RD, OpKind.WT):
                kw = dict(offset=0, length=info.size, entropy=0.9)
            events.append(
                IrpEvent(ts_us=ts, pid=0, op=op, file_id=fid, dir_id=info.dir_id, **kw)
            )
            ts += 1000
    return Trace.from_events(events, "ransomware")
