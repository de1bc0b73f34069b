"""Transactional memory management: a size-class allocator over the word heap
plus epoch-based reclamation.

Allocation happens immediately and is undone if the allocating transaction
aborts; frees are deferred to commit and then to an epoch grace period.  No
allocator state is kept in transactional memory, so allocation never adds
read/write-set entries or lock traffic.  Allocator metadata is volatile and
rebuilt after a crash from a user-supplied liveness iterator.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .htmsim import ContractViolation

WORD_BYTES = 8
MIN_CLASS_WORDS = 2      # 16 bytes
MAX_CLASS_WORDS = 512    # 4 KiB
RUN_WORDS = 512
POISON = 0xDEAD_BEEF_DEAD_BEEF
EPOCH_DISTANCE = 2


class AllocationError(RuntimeError):
    pass


def size_class(nwords: int) -> int:
    """Round ``nwords`` up to its power-of-two class (large objects: exact)."""
    if nwords <= 0:
        raise ValueError("allocation size must be positive")
    if nwords > MAX_CLASS_WORDS:
        return nwords
    c = MIN_CLASS_WORDS
    while c < nwords:
        c <<= 1
    return c


@dataclass
class TxAllocLog:
    allocated: list[int] = field(default_factory=list)
    frees: list[int] = field(default_factory=list)

    def clear(self) -> None:
        self.allocated.clear()
        self.frees.clear()


class _ThreadPool:
    __slots__ = ("free", "retired", "announce", "active", "commits", "arena",
                 "pooled_words", "retired_words")

    def __init__(self):
        self.free: dict[int, list[int]] = {}
        self.retired: list[tuple[int, int]] = []   # (epoch, base)
        self.announce = 0
        self.active = False
        self.commits = 0
        self.arena: Optional[list[int]] = None     # [next, end] of private share
        self.pooled_words = 0
        self.retired_words = 0


class Allocator:
    """Size-class allocator with per-thread pools and EBR.

    The managed range ``[start, end)`` is split into one private share per
    thread slot; a thread carves runs from its own share first, then from the
    global extent list (leftovers, freed large objects, gaps rebuilt after
    recovery), then from the tail of another thread's share.  Private shares
    make allocation addresses depend only on each thread's own request
    sequence, which keeps paired-seed experiments comparable.
    """

    def __init__(self, start: int, end: int, thread_slots: int,
                 poison: Optional[Callable[[int, int], None]] = None,
                 zero: Optional[Callable[[int, int], None]] = None,
                 advance_stride: int = 64, private_shares: bool = True):
        if end < start:
            raise ValueError("negative managed range")
        self.start = start
        self.end = end
        self.thread_slots = thread_slots
        self.advance_stride = advance_stride
        self._poison = poison
        self._zero = zero
        self._lock = threading.Lock()
        self._pools = [_ThreadPool() for _ in range(thread_slots)]
        self._sizes: dict[int, int] = {}            # live base -> words
        self._extents: list[list[int]] = []         # global [start, end)
        self.global_epoch = 0
        total = end - start
        if private_shares and thread_slots > 1:
            share = (total // thread_slots) // RUN_WORDS * RUN_WORDS
        else:
            share = 0
        pos = start
        if share:
            for pool in self._pools:
                pool.arena = [pos, pos + share]
                pos += share
        if pos < end:
            self._extents.append([pos, end])

    @property
    def total_words(self) -> int:
        return self.end - self.start

    # -- carving -----------------------------------------------------------
    def _take_run(self, pool: _ThreadPool, nwords: int) -> Optional[int]:
        with self._lock:
            arena = pool.arena
            if arena is not None and arena[1] - arena[0] >= nwords:
                base = arena[0]
                arena[0] += nwords
                return base
            for ext in self._extents:
                if ext[1] - ext[0] >= nwords:
                    base = ext[0]
                    ext[0] += nwords
                    if ext[0] == ext[1]:
                        self._extents.remove(ext)
                    return base
            # last resort: carve from the tail of the roomiest private share
            donor = max((p.arena for p in self._pools if p.arena is not None),
                        key=lambda a: a[1] - a[0], default=None)
            if donor is not None and donor[1] - donor[0] >= nwords:
                donor[1] -= nwords
                return donor[1]
        return None

    def _refill(self, pool: _ThreadPool, cls: int) -> None:
        run = self._take_run(pool, RUN_WORDS)
        if run is None:
            run = self._take_run(pool, cls)
            if run is None:
                raise AllocationError(f"heap exhausted allocating {cls} words")
            count = 1
        else:
            count = RUN_WORDS // cls
        lst = pool.free.setdefault(cls, [])
        # pop() takes from the end, so push in descending order
        for i in range(count - 1, -1, -1):
            lst.append(run + i * cls)
        pool.pooled_words += count * cls

    def alloc(self, tid: int, nwords: int) -> int:
        cls = size_class(nwords)
        pool = self._pools[tid]
        if cls > MAX_CLASS_WORDS:
            base = self._take_run(pool, cls)
            if base is None:
                raise AllocationError(f"heap exhausted allocating {cls} words")
        else:
            lst = pool.free.get(cls)
            if not lst:
                self._refill(pool, cls)
                lst = pool.free[cls]
            base = lst.pop()
            pool.pooled_words -= cls
        self._sizes[base] = cls
        if self._zero is not None:
            self._zero(base, cls)
        return base

    def _give_back(self, tid: int, base: int, cls: int) -> None:
        if cls > MAX_CLASS_WORDS:
            with self._lock:
                self._extents.append([base, base + cls])
            return
        pool = self._pools[tid]
        pool.free.setdefault(cls, []).append(base)
        pool.pooled_words += cls

    def object_size(self, base: int) -> int:
        try:
            return self._sizes[base]
        except KeyError:
            raise ContractViolation(f"{base} is not a live object") from None

    def is_live(self, base: int) -> bool:
        return base in self._sizes

    # -- transaction hooks -------------------------------------------------
    def tx_alloc(self, tid: int, log: TxAllocLog, nwords: int) -> int:
        base = self.alloc(tid, nwords)
        log.allocated.append(base)
        return base

    def tx_free(self, log: TxAllocLog, base: int) -> None:
        if base not in self._sizes:
            raise ContractViolation(f"free of non-live object {base}")
        if base in log.frees:
            raise ContractViolation(f"double free of {base} in one transaction")
        log.frees.append(base)

    def on_abort(self, tid: int, log: TxAllocLog) -> None:
        for base in reversed(log.allocated):
            cls = self._sizes.pop(base)
            self._give_back(tid, base, cls)
        log.clear()

    def on_commit(self, tid: int, log: TxAllocLog) -> None:
        pool = self._pools[tid]
        if log.frees:
            epoch = self.global_epoch
            for base in log.frees:
                pool.retired_words += self._sizes[base]
                pool.retired.append((epoch, base))
        log.clear()
        pool.commits += 1
        if self.advance_stride and pool.commits % self.advance_stride == 0:
            self.try_advance()
            self.reclaim(tid)

    # -- epochs ------------------------------------------------------------
    def epoch_enter(self, tid: int) -> None:
        pool = self._pools[tid]
        if pool.active:
            raise ContractViolation(f"thread {tid} entered an epoch twice")
        pool.announce = self.global_epoch
        pool.active = True

    def epoch_exit(self, tid: int) -> None:
        pool = self._pools[tid]
        if not pool.active:
            raise ContractViolation(f"thread {tid} exited an epoch it never entered")
        pool.active = False

    def in_epoch(self, tid: int) -> bool:
        return self._pools[tid].active

    def try_advance(self) -> bool:
        with self._lock:
            g = self.global_epoch
            for pool in self._pools:
                if pool.active and pool.announce != g:
                    return False
            self.global_epoch = g + 1
            return True

    def _safe_epoch(self) -> int:
        """Objects retired at epochs <= the returned value may be reused."""
        return self.global_epoch - EPOCH_DISTANCE

    def reclaim(self, tid: int) -> int:
        pool = self._pools[tid]
        if not pool.retired:
            return 0
        safe = self._safe_epoch()
        keep = []
        count = 0
        for epoch, base in pool.retired:
            if epoch <= safe:
                cls = self._sizes.pop(base)
                pool.retired_words -= cls
                if self._poison is not None:
                    self._poison(base, cls)
                self._give_back(tid, base, cls)
                count += 1
            else:
                keep.append((epoch, base))
        pool.retired = keep
        return count

    def drain(self) -> int:
        """Quiescent full reclamation (no thread may be inside an epoch)."""
        for pool in self._pools:
            if pool.active:
                raise ContractViolation("drain with a thread inside an epoch")
        for _ in range(EPOCH_DISTANCE + 1):
            self.try_advance()
        return sum(self.reclaim(t) for t in range(self.thread_slots))

    # -- audits --------------------------------------------------------------
    def occupancy(self) -> dict:
        retired = sum(p.retired_words for p in self._pools)
        live = sum(self._sizes.values()) - retired
        carved = sum(p.arena[1] - p.arena[0] for p in self._pools if p.arena)
        extents = sum(e[1] - e[0] for e in self._extents)
        pooled = sum(p.pooled_words for p in self._pools) + carved + extents
        return {
            "total": self.total_words,
            "live": live,
            "pooled": pooled,
            "retired": retired,
            "live_objects": len(self._sizes),
            "global_epoch": self.global_epoch,
            "balanced": live + pooled + retired == self.total_words,
        }

    def live_ranges(self) -> list[tuple[int, int]]:
        return sorted(self._sizes.items())

    # -- recovery ------------------------------------------------------------
    @classmethod
    def rebuild_from_iterator(cls, live_iter: Iterable[tuple[int, int]], start: int,
                              end: int, thread_slots: int, **kwargs) -> "Allocator":
        """Allocator whose live objects are exactly the yielded (base, words)."""
        alloc = cls(start, end, thread_slots, private_shares=False, **kwargs)
        ranges = []
        for base, nwords in live_iter:
            cls_words = size_class(nwords)
            if base < start or base + cls_words > end:
                raise ValueError(f"live object {base}+{cls_words} outside managed range")
            ranges.append((base, cls_words))
        ranges.sort()
        for (b0, s0), (b1, _) in zip(ranges, ranges[1:]):
            if b0 + s0 > b1:
                raise ValueError(f"live objects at {b0} and {b1} overlap")
        alloc._extents = []
        pos = start
        for base, size in ranges:
            if base > pos:
                alloc._extents.append([pos, base])
            alloc._sizes[base] = size
            pos = base + size
        if pos < end:
            alloc._extents.append([pos, end])
        return alloc
