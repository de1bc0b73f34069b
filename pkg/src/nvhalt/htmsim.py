"""Simulated hardware transactional memory over a flat volatile word store.

The model follows Intel RTM closely enough for the algorithms built on top:

* every hardware transaction tracks a read set and a write set of word
  addresses; writes are buffered and published atomically by ``xend``;
* conflicts are detected eagerly with requester-wins resolution: the access
  that creates a conflict dooms the *other* transaction, and the doomed
  transaction observes its abort at its next instrumented access or at xend;
* non-transactional accesses participate (strong isolation): a plain store
  dooms every transaction tracking the address, a plain load dooms every
  transaction that has the address in its write set;
* capacity aborts and seeded spurious aborts are configurable.

All volatile shared state of the TM (user words, lock words, the global
clock) lives in one :class:`Memory` so that a single conflict detector sees
every access.
"""
from __future__ import annotations

import enum
import random
import threading
from dataclasses import dataclass
from typing import Callable, Optional

MASK64 = (1 << 64) - 1


class AbortCode(enum.Enum):
    CONFLICT = "Conflict"
    CAPACITY = "Capacity"
    SPURIOUS = "Spurious"
    EXPLICIT_FLUSH = "ExplicitFlush"
    EXPLICIT = "Explicit"


class HtmAbort(Exception):
    """Raised where real RTM would return control to ``xbegin``."""

    def __init__(self, code: AbortCode, user_code: Optional[int] = None,
                 addr: Optional[int] = None):
        super().__init__(code, user_code, addr)
        self.code = code
        self.user_code = user_code
        self.addr = addr

    def __repr__(self) -> str:
        extra = ""
        if self.user_code is not None:
            extra = f", user_code={self.user_code}"
        if self.addr is not None:
            extra += f", addr={self.addr}"
        return f"HtmAbort({self.code.value}{extra})"


class ContractViolation(AssertionError):
    """API misuse: nesting, double xend, out-of-range address and so on."""


@dataclass
class HtmConfig:
    read_capacity: int = 256
    write_capacity: int = 64
    spurious_probability: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.read_capacity < 1 or self.write_capacity < 1:
            raise ValueError("HTM capacities must be >= 1")
        if not 0.0 <= self.spurious_probability <= 1.0:
            raise ValueError("spurious_probability must lie in [0, 1]")


ACTIVE = "active"
ABORTED = "aborted"
COMMITTED = "committed"


class HwTx:
    """Handle of one simulated hardware transaction (owned by one thread)."""

    __slots__ = ("tid", "status", "abort", "reads", "writes", "serial")

    def __init__(self, tid: int, serial: int):
        self.tid = tid
        self.status = ACTIVE
        self.abort: Optional[HtmAbort] = None
        self.reads: set[int] = set()
        self.writes: dict[int, int] = {}
        self.serial = serial

    @property
    def active(self) -> bool:
        return self.status == ACTIVE

    def __repr__(self) -> str:
        return (f"HwTx(tid={self.tid}, {self.status}, reads={len(self.reads)}, "
                f"writes={len(self.writes)})")


# Hook signature: (kind, label, addr).  Installed by the deterministic
# scheduler; every primitive calls it *before* taking the memory mutex.
Hook = Callable[[str, str, Optional[int]], None]


class Memory:
    """Word-addressed volatile memory with RTM-like hardware transactions."""

    def __init__(self, size: int = 0, htm: Optional[HtmConfig] = None):
        self.words: list[int] = [0] * size
        self.config = htm or HtmConfig()
        self.hook: Optional[Hook] = None
        self._mutex = threading.Lock()
        self._active: dict[int, HwTx] = {}
        self._rng = random.Random(self.config.rng_seed)
        self._serial = 0

    # -- layout ---------------------------------------------------------
    def reserve(self, n: int) -> int:
        """Append ``n`` zeroed words and return the base address."""
        base = len(self.words)
        self.words.extend([0] * n)
        return base

    def __len__(self) -> int:
        return len(self.words)

    def _check(self, addr: int) -> None:
        if not 0 <= addr < len(self.words):
            raise ContractViolation(f"address {addr} outside memory")

    # -- non-transactional primitives -----------------------------------
    def load(self, addr: int, label: str = "load") -> int:
        hook = self.hook
        if hook is not None:
            hook("mem", label, addr)
        with self._mutex:
            if self._active:
                self._nontx_locked(addr, False)
            return self.words[addr]

    def store(self, addr: int, value: int, label: str = "store") -> None:
        hook = self.hook
        if hook is not None:
            hook("mem", label, addr)
        with self._mutex:
            if self._active:
                self._nontx_locked(addr, True)
            self.words[addr] = value & MASK64

    def cas(self, addr: int, expected: int, new: int, label: str = "cas") -> bool:
        hook = self.hook
        if hook is not None:
            hook("mem", label, addr)
        with self._mutex:
            if self.words[addr] != expected:
                if self._active:
                    self._nontx_locked(addr, False)
                return False
            if self._active:
                self._nontx_locked(addr, True)
            self.words[addr] = new & MASK64
            return True

    def fetch_add(self, addr: int, delta: int, label: str = "faa") -> int:
        hook = self.hook
        if hook is not None:
            hook("mem", label, addr)
        with self._mutex:
            if self._active:
                self._nontx_locked(addr, True)
            old = self.words[addr]
            self.words[addr] = (old + delta) & MASK64
            return old

    def raw_store(self, addr: int, value: int) -> None:
        """Store to memory that no other thread can reach (fresh allocations,
        recovery).  Not a scheduling point and not conflict-checked."""
        self.words[addr] = value & MASK64

    def on_nontx_access(self, addr: int, is_write: bool) -> None:
        """Strong isolation: doom transactions that conflict with a plain access."""
        with self._mutex:
            self._nontx_locked(addr, is_write)

    def _nontx_locked(self, addr: int, is_write: bool) -> None:
        for tx in list(self._active.values()):
            if addr in tx.writes or (is_write and addr in tx.reads):
                self._doom_locked(tx, HtmAbort(AbortCode.CONFLICT, addr=addr))

    # -- hardware transactions -------------------------------------------
    def xbegin(self, tid: int) -> HwTx:
        with self._mutex:
            if tid in self._active:
                raise ContractViolation(f"thread {tid} already in a hardware transaction")
            self._serial += 1
            tx = HwTx(tid, self._serial)
            self._active[tid] = tx
            return tx

    def active_tx(self, tid: int) -> Optional[HwTx]:
        return self._active.get(tid)

    def _doom_locked(self, tx: HwTx, abort: HtmAbort) -> None:
        if tx.status != ACTIVE:
            return
        tx.status = ABORTED
        tx.abort = abort
        tx.writes = {}
        if self._active.get(tx.tid) is tx:
            del self._active[tx.tid]

    def doom(self, tx: HwTx, code: AbortCode) -> None:
        with self._mutex:
            self._doom_locked(tx, HtmAbort(code))

    def _enter(self, tx: HwTx) -> None:
        # mutex held
        if tx.status != ACTIVE:
            if tx.status == COMMITTED:
                raise ContractViolation("access after xend")
            raise tx.abort
        p = self.config.spurious_probability
        if p > 0.0 and (p >= 1.0 or self._rng.random() < p):
            self._doom_locked(tx, HtmAbort(AbortCode.SPURIOUS))
            raise tx.abort

    def tx_load(self, tx: HwTx, addr: int, label: str = "tx_load") -> int:
        hook = self.hook
        if hook is not None:
            hook("tx", label, addr)
        with self._mutex:
            self._enter(tx)
            if addr in tx.writes:
                return tx.writes[addr]
            self._check(addr)
            if addr not in tx.reads:
                if len(tx.reads) >= self.config.read_capacity:
                    self._doom_locked(tx, HtmAbort(AbortCode.CAPACITY, addr=addr))
                    raise tx.abort
                for other in list(self._active.values()):
                    if other is not tx and addr in other.writes:
                        self._doom_locked(other, HtmAbort(AbortCode.CONFLICT, addr=addr))
                tx.reads.add(addr)
            return self.words[addr]

    def tx_store(self, tx: HwTx, addr: int, value: int, label: str = "tx_store") -> None:
        hook = self.hook
        if hook is not None:
            hook("tx", label, addr)
        with self._mutex:
            self._enter(tx)
            if addr not in tx.writes:
                self._check(addr)
                if len(tx.writes) >= self.config.write_capacity:
                    self._doom_locked(tx, HtmAbort(AbortCode.CAPACITY, addr=addr))
                    raise tx.abort
                for other in list(self._active.values()):
                    if other is not tx and (addr in other.reads or addr in other.writes):
                        self._doom_locked(other, HtmAbort(AbortCode.CONFLICT, addr=addr))
                tx.reads.add(addr)
            tx.writes[addr] = value & MASK64

    def xend(self, tx: HwTx) -> None:
        """Commit ``tx`` or raise its pending :class:`HtmAbort`."""
        hook = self.hook
        if hook is not None:
            hook("tx", "xend", None)
        with self._mutex:
            if tx.status == COMMITTED:
                raise ContractViolation("xend called twice")
            if tx.status == ABORTED:
                raise tx.abort
            words = self.words
            for addr, value in tx.writes.items():
                words[addr] = value
            tx.status = COMMITTED
            del self._active[tx.tid]

    def xabort(self, tx: HwTx, user_code: int) -> None:
        """Explicit abort; never returns normally."""
        with self._mutex:
            if tx.status == ACTIVE:
                self._doom_locked(tx, HtmAbort(AbortCode.EXPLICIT, user_code=user_code))
            elif tx.status == COMMITTED:
                raise ContractViolation("xabort after xend")
            raise tx.abort
