"""Transaction histories recorded from the TM's instrumentation callbacks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


@dataclass
class Event:
    seq: int
    kind: str            # begin, read, write, lp, commit, abort, crash
    tid: int
    txn: int
    addr: Optional[int] = None
    value: Optional[int] = None
    info: Optional[str] = None


@dataclass
class TxnInfo:
    txn: int
    tid: int
    path: str
    begin_seq: int
    reads: list[tuple[int, int]] = field(default_factory=list)
    writes: dict[int, int] = field(default_factory=dict)
    status: str = "live"          # live, committed, aborted
    end_seq: Optional[int] = None
    lp: Optional[int] = None
    abort_reason: Optional[str] = None


class History:
    """Append-only event log; plugs into ``TransactionalMemory.recorder``."""

    def __init__(self):
        self.events: list[Event] = []
        self.txns: dict[int, TxnInfo] = {}
        self._own: dict[int, set[int]] = {}
        self.crashed = False

    def _add(self, kind: str, tid: int, txn: int, addr=None, value=None, info=None) -> int:
        seq = len(self.events)
        self.events.append(Event(seq, kind, tid, txn, addr, value, info))
        return seq

    # recorder interface
    def begin(self, tid: int, txn: int, path: str) -> None:
        seq = self._add("begin", tid, txn, info=path)
        self.txns[txn] = TxnInfo(txn, tid, path, seq)
        self._own[txn] = set()

    def read(self, txn: int, addr: int, value: int) -> None:
        t = self.txns[txn]
        self._add("read", t.tid, txn, addr, value)
        if addr not in self._own[txn]:
            t.reads.append((addr, value))

    def write(self, txn: int, addr: int, value: int) -> None:
        t = self.txns[txn]
        self._add("write", t.tid, txn, addr, value)
        t.writes[addr] = value
        self._own[txn].add(addr)

    def mark(self) -> int:
        return len(self.events)

    def lp(self, txn: int, at: Optional[int] = None) -> None:
        t = self.txns[txn]
        seq = self._add("lp", t.tid, txn)
        t.lp = seq if at is None else at

    def commit(self, txn: int) -> None:
        t = self.txns[txn]
        t.end_seq = self._add("commit", t.tid, txn)
        t.status = "committed"

    def abort(self, txn: int, reason: str) -> None:
        t = self.txns[txn]
        t.end_seq = self._add("abort", t.tid, txn, info=reason)
        t.status = "aborted"
        t.abort_reason = reason

    def crash(self) -> None:
        self._add("crash", -1, -1)
        self.crashed = True

    # queries
    def committed(self) -> list[TxnInfo]:
        return [t for t in self.txns.values() if t.status == "committed"]

    def aborted(self) -> list[TxnInfo]:
        return [t for t in self.txns.values() if t.status == "aborted"]

    def live(self) -> list[TxnInfo]:
        return [t for t in self.txns.values() if t.status == "live"]

    def addresses(self) -> set[int]:
        out: set[int] = set()
        for t in self.txns.values():
            out.update(a for a, _ in t.reads)
            out.update(t.writes)
        return out

    def to_json(self) -> list[dict]:
        return [e.__dict__.copy() for e in self.events]


class LpRecorder:
    """Lightweight recorder keeping only begin and linearization order.

    Used by container-level crash fuzzing where full read/write logs would
    dominate the run time.
    """

    def __init__(self):
        self.clock = 0
        self.lp_at: dict[int, tuple[int, int]] = {}
        self.committed: set[int] = set()

    def begin(self, tid: int, txn: int, path: str) -> None:
        pass

    def read(self, txn: int, addr: int, value: int) -> None:
        pass

    def write(self, txn: int, addr: int, value: int) -> None:
        pass

    def mark(self) -> int:
        self.clock += 1
        return self.clock

    def lp(self, txn: int, at: Optional[int] = None) -> None:
        self.clock += 1
        self.lp_at[txn] = (at if at is not None else self.clock, self.clock)

    def commit(self, txn: int) -> None:
        self.committed.add(txn)

    def abort(self, txn: int, reason: str) -> None:
        self.lp_at.pop(txn, None)
