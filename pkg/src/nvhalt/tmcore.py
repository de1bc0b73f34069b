"""Persistent hybrid transactional memory with hardware-assisted locking.

Software path: TL2-style with buffered writes and commit-time locking.  At
commit the write-set locks are acquired, the read set revalidated, and every
written word is persisted through its Trinity slot *while the locks are
held*; the thread's persistent version number is bumped and persisted before
the locks are released.  Nobody can therefore observe a value that is not yet
durable.

Hardware path: reads check the word's lock inside the hardware transaction;
writes *acquire* the lock inside the hardware transaction (so the acquisition
commits atomically with the data) and log the pre-image in a thread-local
list.  After ``xend`` the log is persisted exactly as on the software path
and only then are the locks released.

The strongly progressive variant adds a global clock and a second,
hardware-only lock version so that a software committer that wins the clock
increment only has to check for hardware conflicts.
"""
from __future__ import annotations

import enum
import itertools
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from .htmsim import AbortCode, ContractViolation, HtmAbort, HtmConfig, HwTx, Memory
from .locks import LockTable
from .memmgr import POISON, AllocationError, Allocator, TxAllocLog
from .pheap import (SEQ_BITS, HeapConfig, PersistentHeap, PersistentImage,
                    unpack_pver)

LOCKED_BY_OTHER = 0xA1
VOLUNTARY_CODE = 0xA2
ROOT_SLOTS = 16


class Variant(str, enum.Enum):
    WEAK = "weak"
    SP = "sp"


class AbortReason(str, enum.Enum):
    READ_VALIDATION = "ReadValidation"
    WRITE_LOCK = "WriteLock"
    VOLUNTARY = "Voluntary"


@dataclass(frozen=True)
class ConflictWitness:
    """The lock that made a software attempt abort, as observed."""

    lock: int
    owner: int
    sver: int
    expected: Optional[int] = None
    hver: Optional[int] = None


class TxAbort(Exception):
    """A software-path attempt aborted (always with a conflict witness)."""

    def __init__(self, reason: AbortReason, witness: Optional[ConflictWitness] = None):
        super().__init__(reason, witness)
        self.reason = reason
        self.witness = witness


class VoluntaryAbort(Exception):
    """The transaction body asked to abort; it is not retried."""


@dataclass
class TxConfig:
    variant: Variant = Variant.WEAK
    lock_mode: str = "hashed"
    table_size: int = 1 << 20
    max_hw_attempts: int = 10
    # None: retry the software path until it commits
    sw_max_retries: Optional[int] = None
    epoch_stride: int = 64
    # yield the interpreter after a conflict abort so the lock holder can run
    yield_on_conflict: bool = True
    debug: bool = False
    record_transactions: bool = False
    # negative configurations, for the verification suite only
    no_lock_instrumentation: bool = False
    no_persist_locking: bool = False

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.max_hw_attempts < 0:
            raise ValueError("max_hw_attempts must be >= 0")


@dataclass
class TxnRecord:
    tid: int
    hw_attempts: int = 0
    sw_attempts: int = 0
    committed: Optional[str] = None      # "hw", "sw" or None (voluntary abort)
    abort_codes: list[str] = field(default_factory=list)
    witnesses: list[Optional[ConflictWitness]] = field(default_factory=list)


class TxStats:
    """Per-thread counters; merge() to aggregate."""

    def __init__(self):
        self.commits = Counter()          # by path
        self.aborts = Counter()           # by code
        self.hw_attempt_hist = Counter()  # hw attempts per finished transaction
        self.transactions = 0
        self.attempts = 0
        self.voluntary = 0
        self.max_hw_attempts = 0
        self.sw_aborts_without_witness = 0
        self.poison_reads = 0
        self.set_sizes = {"commit": [0, 0, 0, 0, 0], "abort": [0, 0, 0, 0, 0]}
        self.records: list[TxnRecord] = []

    def note_sets(self, where: str, nread: int, nwrite: int) -> None:
        s = self.set_sizes[where]
        s[0] += 1
        s[1] += nread
        s[2] += nwrite
        if nread > s[3]:
            s[3] = nread
        if nwrite > s[4]:
            s[4] = nwrite

    def merge(self, other: "TxStats") -> "TxStats":
        self.commits.update(other.commits)
        self.aborts.update(other.aborts)
        self.hw_attempt_hist.update(other.hw_attempt_hist)
        self.transactions += other.transactions
        self.attempts += other.attempts
        self.voluntary += other.voluntary
        self.max_hw_attempts = max(self.max_hw_attempts, other.max_hw_attempts)
        self.sw_aborts_without_witness += other.sw_aborts_without_witness
        self.poison_reads += other.poison_reads
        for k in ("commit", "abort"):
            a, b = self.set_sizes[k], other.set_sizes[k]
            self.set_sizes[k] = [a[0] + b[0], a[1] + b[1], a[2] + b[2],
                                 max(a[3], b[3]), max(a[4], b[4])]
        self.records.extend(other.records)
        return self

    @property
    def total_aborts(self) -> int:
        return sum(self.aborts.values())

    def set_size_summary(self) -> dict:
        out = {}
        overall = [self.set_sizes["commit"][i] + self.set_sizes["abort"][i] for i in range(3)]
        overall += [max(self.set_sizes["commit"][i], self.set_sizes["abort"][i]) for i in (3, 4)]
        for name, s in (("overall", overall), ("at_abort", self.set_sizes["abort"])):
            n = s[0] or 1
            out[name] = {"avg_read": s[1] / n, "avg_write": s[2] / n,
                         "max_read": s[3], "max_write": s[4]}
        return out

    def to_dict(self) -> dict:
        return {
            "transactions": self.transactions,
            "attempts": self.attempts,
            "commits": dict(self.commits),
            "aborts": dict(self.aborts),
            "abort_total": self.total_aborts,
            "voluntary": self.voluntary,
            "hw_attempt_hist": {str(k): v for k, v in sorted(self.hw_attempt_hist.items())},
            "max_hw_attempts": self.max_hw_attempts,
            "sw_aborts_without_witness": self.sw_aborts_without_witness,
            "poison_reads": self.poison_reads,
            "data_set_sizes": self.set_size_summary(),
        }


class ThreadCtx:
    """Per-thread TM state.  Exactly one live transaction at a time."""

    def __init__(self, tm: "TransactionalMemory", tid: int, pver_num: int):
        self.tm = tm
        self.tid = tid
        self.pver_num = pver_num
        self.stats = TxStats()
        self.tx: Optional[_TxBase] = None
        self.last_txn = 0      # id of the most recently committed attempt

    def __repr__(self) -> str:
        return f"ThreadCtx(tid={self.tid}, pver={self.pver_num})"


def _abort_code_name(exc: BaseException) -> str:
    if isinstance(exc, HtmAbort):
        if exc.code is AbortCode.EXPLICIT and exc.user_code == VOLUNTARY_CODE:
            return AbortReason.VOLUNTARY.value
        return exc.code.value
    if isinstance(exc, TxAbort):
        return exc.reason.value
    return type(exc).__name__


class _TxBase:
    path = "?"

    def __init__(self, tm: "TransactionalMemory", ctx: ThreadCtx, txn: int):
        self.tm = tm
        self.ctx = ctx
        self.tid = ctx.tid
        self.txn = txn
        self.alloc_log = TxAllocLog()
        self.done = False

    def _finish(self) -> None:
        self.done = True
        self.tm.allocator.epoch_exit(self.tid)
        self.ctx.tx = None

    def _persist_and_release(self, entries: Iterable[tuple[int, int, int]],
                             held: Iterable[int]) -> None:
        """Persist (addr, old, new) entries, bump pVerNum, then release locks.

        ``new`` is None on the hardware path: the published value is re-read.
        """
        tm = self.tm
        heap = tm.heap
        tid = self.tid
        ctx = self.ctx
        pver = (tid << SEQ_BITS) | ctx.pver_num
        tm._point("persist", None)
        for addr, old, new in entries:
            if new is None:
                new = heap.load(addr)
                heap.write_slot(addr, old, pver, new)
                heap.flush_line(heap.vmem_addr_to_pmem(addr), tid)
            else:
                old = heap.load(addr)
                heap.write_slot(addr, old, pver, new)
                heap.flush_line(heap.vmem_addr_to_pmem(addr), tid)
                heap.store(addr, new)
        heap.fence(tid)
        ctx.pver_num += 1
        heap.write_pver(tid, ctx.pver_num)
        heap.flush_line(heap.pver_line(tid), tid)
        heap.fence(tid)
        tm._point("release", None)
        locks = tm.locks
        for lk in held:
            locks.release(lk, tid)

    # -- memory management inside transactions ----------------------------
    def alloc(self, nwords: int) -> int:
        try:
            return self.tm.allocator.tx_alloc(self.tid, self.alloc_log, nwords)
        except AllocationError:
            self.abort()

    def free(self, base: int) -> None:
        self.tm.allocator.tx_free(self.alloc_log, base)


class SwTx(_TxBase):
    """Software-path attempt: buffered writes, commit-time locking."""

    path = "sw"

    def __init__(self, tm, ctx, txn):
        super().__init__(tm, ctx, txn)
        self.rd: dict[int, tuple[int, int]] = {}   # lock -> (sver, hver) at encounter
        self.rd_addrs: set[int] = set()
        self.wr: dict[int, int] = {}               # addr -> buffered value
        self.wr_lk: dict[int, int] = {}            # lock -> encounter sver
        self.held: list[int] = []
        self.rclock = 0
        self.lp_mark: Optional[int] = None
        self.fast_path_validated = False

    def _abort(self, reason: AbortReason, witness: Optional[ConflictWitness] = None):
        tm = self.tm
        if self.held:
            for lk in self.held:
                tm.locks.release(lk, self.tid)
            self.held = []
        tm.allocator.on_abort(self.tid, self.alloc_log)
        stats = self.ctx.stats
        stats.aborts[reason.value] += 1
        if witness is None and reason is not AbortReason.VOLUNTARY:
            stats.sw_aborts_without_witness += 1
        stats.note_sets("abort", len(self.rd_addrs), len(self.wr))
        if tm.recorder is not None:
            tm.recorder.abort(self.txn, reason.value)
        self._finish()
        if reason is AbortReason.VOLUNTARY:
            raise VoluntaryAbort()
        raise TxAbort(reason, witness)

    def _check(self) -> None:
        if self.done:
            raise ContractViolation("transaction already finished")

    def _validate(self) -> Optional[ConflictWitness]:
        locks = self.tm.locks
        tid = self.tid
        for lk, (sver, _h) in self.rd.items():
            snap = locks.snapshot(lk)
            if snap.sver == sver and not snap.locked:
                continue
            if snap.owner == tid and snap.sver == sver + 1:
                continue
            return ConflictWitness(lk, snap.owner, snap.sver, expected=sver)
        return None

    def read(self, addr: int) -> int:
        self._check()
        if addr in self.wr:
            return self.wr[addr]
        tm = self.tm
        lk = tm.locks.get_lock(addr)
        snap = tm.locks.snapshot(lk)
        if snap.locked and snap.owner != self.tid:
            self._abort(AbortReason.READ_VALIDATION,
                        ConflictWitness(lk, snap.owner, snap.sver))
        value = tm.heap.load(addr)
        rec = tm.recorder
        # the read set is known consistent at the load, not at the end of the
        # (multi-step) validation that follows it
        mark = rec.mark() if rec is not None else None
        if lk not in self.rd:
            self.rd[lk] = (snap.sver, snap.hver)
        self.rd_addrs.add(addr)
        witness = self._validate()
        if witness is not None:
            self._abort(AbortReason.READ_VALIDATION, witness)
        if value == POISON:
            self.ctx.stats.poison_reads += 1
        if rec is not None:
            rec.read(self.txn, addr, value)
            self.lp_mark = mark
        return value

    def write(self, addr: int, value: int) -> None:
        self._check()
        if addr not in self.wr:
            tm = self.tm
            lk = tm.locks.get_lock(addr)
            if lk not in self.wr_lk:
                if lk in self.rd:
                    enc = self.rd[lk][0]
                else:
                    snap = tm.locks.snapshot(lk)
                    if snap.locked:
                        self._abort(AbortReason.WRITE_LOCK,
                                    ConflictWitness(lk, snap.owner, snap.sver))
                    enc = snap.sver
                self.wr_lk[lk] = enc
        self.wr[addr] = value
        if self.tm.recorder is not None:
            self.tm.recorder.write(self.txn, addr, value)

    def abort(self) -> None:
        self._check()
        self._abort(AbortReason.VOLUNTARY)

    def commit(self) -> None:
        self._check()
        tm = self.tm
        ctx = self.ctx
        rec = tm.recorder
        if not self.wr:
            if rec is not None:
                rec.lp(self.txn, at=self.lp_mark)
            self._committed()
            return
        locks = tm.locks
        tid = self.tid
        sp = tm.config.variant is Variant.SP
        order = sorted(self.wr_lk) if sp else list(self.wr_lk)
        tm._point("lock", None)
        for lk in order:
            if not locks.try_acquire(lk, self.wr_lk[lk], tid):
                snap = locks.snapshot(lk)
                self._abort(AbortReason.WRITE_LOCK,
                            ConflictWitness(lk, snap.owner, snap.sver, expected=self.wr_lk[lk]))
            self.held.append(lk)
        tm._point("validate", None)
        # write locks are held; any read changed from here on fails validation
        lp_at = rec.mark() if rec is not None else None
        if sp:
            mem = tm.memory
            if mem.cas(tm.gclock_addr, self.rclock, self.rclock + 1, "gclock"):
                self.fast_path_validated = True
                for lk, (_s, hver) in self.rd.items():
                    snap = locks.snapshot(lk)
                    if snap.hver != hver:
                        self._abort(AbortReason.READ_VALIDATION,
                                    ConflictWitness(lk, snap.owner, snap.sver, hver=snap.hver))
            else:
                # keep the clock counting every writer, as TL2 does
                mem.fetch_add(tm.gclock_addr, 1, "gclock")
                witness = self._validate()
                if witness is not None:
                    self._abort(AbortReason.READ_VALIDATION, witness)
        else:
            witness = self._validate()
            if witness is not None:
                self._abort(AbortReason.READ_VALIDATION, witness)
        if rec is not None:
            rec.lp(self.txn, at=lp_at)
        held, self.held = self.held, []
        self._persist_and_release(((a, 0, v) for a, v in self.wr.items()), held)
        self._committed()

    def _committed(self) -> None:
        tm = self.tm
        stats = self.ctx.stats
        self.ctx.last_txn = self.txn
        stats.commits["sw"] += 1
        stats.note_sets("commit", len(self.rd_addrs), len(self.wr))
        tm.allocator.on_commit(self.tid, self.alloc_log)
        if tm.recorder is not None:
            tm.recorder.commit(self.txn)
        self._finish()


class HwTxn(_TxBase):
    """Hardware-path attempt with hardware-assisted locking."""

    path = "hw"

    def __init__(self, tm, ctx, txn, htx: HwTx):
        super().__init__(tm, ctx, txn)
        self.htx = htx
        self.wlog: dict[int, int] = {}       # addr -> pre-image (first write wins)
        self.acquired: list[int] = []
        self.nreads = 0

    def _fail(self, exc: HtmAbort):
        tm = self.tm
        if self.htx.active:
            tm.memory.doom(self.htx, exc.code)
        stats = self.ctx.stats
        stats.aborts[_abort_code_name(exc)] += 1
        stats.note_sets("abort", self.nreads, len(self.wlog))
        # locks taken inside the hardware transaction vanish with it
        self.acquired = []
        self.wlog = {}
        tm.allocator.on_abort(self.tid, self.alloc_log)
        if tm.recorder is not None:
            tm.recorder.abort(self.txn, _abort_code_name(exc))
        self._finish()
        raise exc

    def _check(self) -> None:
        if self.done:
            raise ContractViolation("transaction already finished")

    def read(self, addr: int) -> int:
        self._check()
        tm = self.tm
        try:
            if not tm.config.no_lock_instrumentation:
                lk = tm.locks.get_lock(addr)
                if not tm.locks.htm_read_ok(self.htx, lk, self.tid):
                    tm.memory.xabort(self.htx, LOCKED_BY_OTHER)
            value = tm.memory.tx_load(self.htx, tm.heap.base + addr)
        except HtmAbort as exc:
            self._fail(exc)
        self.nreads += 1
        if value == POISON:
            self.ctx.stats.poison_reads += 1
        if tm.recorder is not None:
            tm.recorder.read(self.txn, addr, value)
        return value

    def write(self, addr: int, value: int) -> None:
        self._check()
        tm = self.tm
        cfg = tm.config
        mem = tm.memory
        try:
            if not cfg.no_lock_instrumentation:
                lk = tm.locks.get_lock(addr)
                if cfg.no_persist_locking:
                    if not tm.locks.htm_read_ok(self.htx, lk, self.tid):
                        mem.xabort(self.htx, LOCKED_BY_OTHER)
                else:
                    fresh = lk not in self.acquired
                    if not tm.locks.htm_acquire(self.htx, lk, self.tid,
                                                cfg.variant is Variant.SP):
                        mem.xabort(self.htx, LOCKED_BY_OTHER)
                    if fresh:
                        self.acquired.append(lk)
            maddr = tm.heap.base + addr
            if addr not in self.wlog:
                self.wlog[addr] = mem.tx_load(self.htx, maddr)
            mem.tx_store(self.htx, maddr, value)
        except HtmAbort as exc:
            self._fail(exc)
        if tm.recorder is not None:
            tm.recorder.write(self.txn, addr, value)

    def abort(self) -> None:
        self._check()
        try:
            self.tm.memory.xabort(self.htx, VOLUNTARY_CODE)
        except HtmAbort as exc:
            self._fail(exc)

    def commit(self) -> None:
        self._check()
        tm = self.tm
        try:
            tm.memory.xend(self.htx)
        except HtmAbort as exc:
            self._fail(exc)
        if tm.recorder is not None:
            tm.recorder.lp(self.txn)
        if self.wlog:
            held, self.acquired = self.acquired, []
            self._persist_and_release(((a, old, None) for a, old in self.wlog.items()), held)
        stats = self.ctx.stats
        self.ctx.last_txn = self.txn
        stats.commits["hw"] += 1
        stats.note_sets("commit", self.nreads, len(self.wlog))
        tm.allocator.on_commit(self.tid, self.alloc_log)
        if tm.recorder is not None:
            tm.recorder.commit(self.txn)
        self._finish()


@dataclass
class RecoveryReport:
    words: list[int]
    reverted: list[int]
    pver: list[int]


def recover_words(image: PersistentImage) -> RecoveryReport:
    """Resolve every slot: keep ``new`` iff its seq is below its thread's
    persisted version number, otherwise revert to ``old``."""
    pvers = image.pver
    nthreads = len(pvers)
    words = [0] * image.word_count
    reverted = []
    for addr, (new, old, pver) in enumerate(image.slots):
        tid, seq = unpack_pver(pver)
        if tid >= nthreads:
            raise ValueError(f"slot {addr} names thread {tid} outside the image")
        if seq >= pvers[tid]:
            words[addr] = old
            reverted.append(addr)
        else:
            words[addr] = new
    return RecoveryReport(words, reverted, list(pvers))


class TransactionalMemory:
    """One persistent HyTM instance: heap, locks, HTM, allocator, threads."""

    def __init__(self, heap_config: HeapConfig, config: Optional[TxConfig] = None,
                 htm_config: Optional[HtmConfig] = None,
                 image: Optional[PersistentImage] = None):
        self.config = config or TxConfig()
        self.heap_config = heap_config
        self.memory = Memory(0, htm_config)
        self.heap = PersistentHeap(heap_config, self.memory, image)
        assert self.heap.base == 0
        self.locks = LockTable(self.memory, heap_config.word_count,
                               self.config.lock_mode, self.config.table_size)
        self.gclock_addr = self.memory.reserve(1)
        self.allocator = Allocator(ROOT_SLOTS, heap_config.word_count,
                                   heap_config.thread_slots,
                                   poison=self._poison_words, zero=self._zero_words,
                                   advance_stride=self.config.epoch_stride)
        self.recorder = None
        self._threads: dict[int, ThreadCtx] = {}
        self._txn_ids = itertools.count(1)
        self._pver_start = [0] * heap_config.thread_slots
        if self.config.debug and not (self.config.no_lock_instrumentation
                                      or self.config.no_persist_locking):
            self.heap.owner_check = self.locks.owned_by

    # -- plumbing ------------------------------------------------------------
    @property
    def word_count(self) -> int:
        return self.heap.word_count

    def _point(self, label: str, addr: Optional[int]) -> None:
        hook = self.memory.hook
        if hook is not None:
            hook("phase", label, addr)

    def _zero_words(self, base: int, n: int) -> None:
        words = self.memory.words
        hb = self.heap.base
        for a in range(hb + base, hb + base + n):
            words[a] = 0

    def _poison_words(self, base: int, n: int) -> None:
        words = self.memory.words
        hb = self.heap.base
        for a in range(hb + base, hb + base + n):
            words[a] = POISON

    def register_thread(self, tid: Optional[int] = None) -> ThreadCtx:
        if tid is None:
            tid = 1
            while tid in self._threads:
                tid += 1
        if not 1 <= tid < self.heap.thread_slots:
            raise ContractViolation(f"tid {tid} outside [1, {self.heap.thread_slots})")
        if tid in self._threads:
            raise ContractViolation(f"tid {tid} already registered")
        ctx = ThreadCtx(self, tid, self._pver_start[tid])
        self._threads[tid] = ctx
        return ctx

    def thread(self, tid: int) -> ThreadCtx:
        ctx = self._threads.get(tid)
        return ctx if ctx is not None else self.register_thread(tid)

    @property
    def threads(self) -> list[ThreadCtx]:
        return list(self._threads.values())

    def stats(self) -> TxStats:
        total = TxStats()
        for ctx in self._threads.values():
            total.merge(ctx.stats)
        return total

    def peek(self, addr: int) -> int:
        """Unsynchronised read of a user word (audits, quiescent only)."""
        return self.memory.words[self.heap.base + addr]

    def poke(self, addr: int, value: int) -> None:
        """Durably initialise a word outside any transaction (setup only)."""
        self.heap.format_word(addr, value)

    # -- transactions ----------------------------------------------------------
    def begin(self, ctx: ThreadCtx, path: str = "sw") -> _TxBase:
        if ctx.tx is not None:
            raise ContractViolation(f"thread {ctx.tid} already has a live transaction")
        txn = next(self._txn_ids)
        self.allocator.epoch_enter(ctx.tid)
        if path == "hw":
            tx: _TxBase = HwTxn(self, ctx, txn, self.memory.xbegin(ctx.tid))
        elif path == "sw":
            tx = SwTx(self, ctx, txn)
            if self.config.variant is Variant.SP:
                tx.rclock = self.memory.load(self.gclock_addr, "gclock")
        else:
            self.allocator.epoch_exit(ctx.tid)
            raise ValueError(f"unknown path {path!r}")
        ctx.tx = tx
        if self.recorder is not None:
            self.recorder.begin(ctx.tid, txn, path)
        return tx

    def choose_path(self, hw_attempts_so_far: int) -> str:
        return "hw" if hw_attempts_so_far < self.config.max_hw_attempts else "sw"

    def run_transaction(self, ctx: ThreadCtx, body: Callable[[Any], Any]) -> Any:
        """Run ``body(tx)`` atomically and durably; retry on aborts.

        Up to ``max_hw_attempts`` hardware attempts, then software attempts
        until commit.  ``VoluntaryAbort`` propagates without retry.
        """
        cfg = self.config
        stats = ctx.stats
        rec = TxnRecord(ctx.tid) if cfg.record_transactions else None
        hw = sw = 0
        try:
            while True:
                path = self.choose_path(hw)
                if path == "hw":
                    hw += 1
                else:
                    sw += 1
                tx = self.begin(ctx, path)
                try:
                    result = body(tx)
                    if tx.done:
                        raise ContractViolation("transaction body finished its own transaction")
                    tx.commit()
                except HtmAbort as exc:
                    if rec is not None:
                        rec.abort_codes.append(_abort_code_name(exc))
                        rec.witnesses.append(None)
                    if exc.code is AbortCode.EXPLICIT and exc.user_code == VOLUNTARY_CODE:
                        raise VoluntaryAbort() from None
                    if cfg.yield_on_conflict and exc.code is not AbortCode.SPURIOUS:
                        time.sleep(0)
                    continue
                except TxAbort as exc:
                    if rec is not None:
                        rec.abort_codes.append(exc.reason.value)
                        rec.witnesses.append(exc.witness)
                    if cfg.sw_max_retries is not None and sw > cfg.sw_max_retries:
                        raise
                    if cfg.yield_on_conflict:
                        time.sleep(0)
                    continue
                except VoluntaryAbort:
                    raise
                except Exception:
                    if not tx.done:
                        self._discard(tx)
                    raise
                if rec is not None:
                    rec.committed = path
                return result
        except VoluntaryAbort:
            stats.voluntary += 1
            raise
        finally:
            stats.transactions += 1
            stats.attempts += hw + sw
            stats.hw_attempt_hist[hw] += 1
            if hw > stats.max_hw_attempts:
                stats.max_hw_attempts = hw
            if rec is not None:
                rec.hw_attempts, rec.sw_attempts = hw, sw
                stats.records.append(rec)

    def _discard(self, tx: _TxBase) -> None:
        """Abort a live attempt after a non-TM exception escaped its body."""
        try:
            tx.abort()
        except (VoluntaryAbort, HtmAbort, TxAbort):
            pass

    # -- recovery ----------------------------------------------------------------
    @classmethod
    def recover(cls, image: PersistentImage, heap_config: Optional[HeapConfig] = None,
                config: Optional[TxConfig] = None, htm_config: Optional[HtmConfig] = None,
                live_iter: Optional[Callable[["TransactionalMemory"], Iterable[tuple[int, int]]]] = None,
                ) -> tuple["TransactionalMemory", RecoveryReport]:
        """Rebuild a TM from a crash image.

        Slots are resolved with :func:`recover_words`; the NVM image is then
        normalised (every slot rewritten as committed by the formatter) so a
        reverted slot can never be resurrected by later version bumps.
        Allocator state is rebuilt from ``live_iter(tm)`` when given.
        """
        report = recover_words(image)
        if heap_config is None:
            heap_config = HeapConfig(image.word_count, image.thread_slots)
        elif (heap_config.word_count, heap_config.thread_slots) != (image.word_count,
                                                                     image.thread_slots):
            raise ValueError("heap_config geometry does not match the image")
        clean = PersistentImage(image.word_count, image.thread_slots, list(image.pver),
                                [(w, w, 0) for w in report.words])
        clean.pver[0] = 1
        tm = cls(heap_config, config, htm_config, image=clean)
        words = tm.memory.words
        base = tm.heap.base
        for addr, w in enumerate(report.words):
            words[base + addr] = w
        tm._pver_start = [v + 1 for v in clean.pver]
        if live_iter is not None:
            tm.rebuild_allocator(live_iter(tm))
        return tm, report

    def rebuild_allocator(self, live: Iterable[tuple[int, int]]) -> None:
        self.allocator = Allocator.rebuild_from_iterator(
            live, ROOT_SLOTS, self.heap.word_count, self.heap.thread_slots,
            poison=self._poison_words, zero=self._zero_words,
            advance_stride=self.config.epoch_stride)
