"""Versioned fine-grained locks.

A lock is one packed 64-bit word ``owner << 48 | sver`` where an odd
``sver`` means locked (and then ``owner`` is the holder's thread id).  In the
strongly progressive variant each lock has a second, adjacent word
``hver`` that only hardware transactions increment, while they hold the lock.

Locks live in the shared :class:`~nvhalt.htmsim.Memory` so software CAS
operations and hardware-transactional accesses to them interact through the
HTM conflict detector.
"""
from __future__ import annotations

from dataclasses import dataclass

from .htmsim import ContractViolation, HwTx, Memory

OWNER_SHIFT = 48
VERSION_MASK = (1 << OWNER_SHIFT) - 1
GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


def pack_lock(owner: int, version: int) -> int:
    return (owner << OWNER_SHIFT) | (version & VERSION_MASK)


def lock_owner(word: int) -> int:
    return word >> OWNER_SHIFT


def lock_version(word: int) -> int:
    return word & VERSION_MASK


def is_locked(word: int) -> bool:
    return bool(word & 1)


@dataclass(frozen=True)
class LockSnapshot:
    owner: int
    sver: int
    hver: int = 0

    @property
    def locked(self) -> bool:
        return bool(self.sver & 1)


class LockTable:
    """Fixed-size hashed lock table, or one colocated lock per word."""

    def __init__(self, memory: Memory, word_count: int, mode: str = "hashed",
                 table_size: int = 1 << 20, hash_mult: int = GOLDEN):
        if mode not in ("hashed", "colocated"):
            raise ValueError(f"unknown lock mode {mode!r}")
        self.memory = memory
        self.word_count = word_count
        self.mode = mode
        self.hash_mult = hash_mult & MASK64
        if mode == "hashed":
            if table_size < 2 or table_size & (table_size - 1):
                raise ValueError("hashed table_size must be a power of two >= 2")
            self.size = table_size
            self._shift = 64 - (table_size.bit_length() - 1)
        else:
            self.size = word_count
            self._shift = 0
        # two words per lock: packed (owner, sver) then hver
        self.base = memory.reserve(2 * self.size)

    def get_lock(self, addr: int) -> int:
        if not 0 <= addr < self.word_count:
            raise ContractViolation(f"address {addr} outside heap")
        if self.mode == "colocated":
            return addr
        return ((addr * self.hash_mult) & MASK64) >> self._shift

    def word_addr(self, lk: int) -> int:
        return self.base + 2 * lk

    def hver_addr(self, lk: int) -> int:
        return self.base + 2 * lk + 1

    # -- software-side operations ------------------------------------------
    def snapshot(self, lk: int) -> LockSnapshot:
        """Coherent (owner, sver, hver) via seqlock: word, hver, word again."""
        mem = self.memory
        waddr = self.base + 2 * lk
        while True:
            w1 = mem.load(waddr, "lock")
            h = mem.load(waddr + 1, "hlock")
            w2 = mem.load(waddr, "lock")
            if w1 == w2:
                return LockSnapshot(w1 >> OWNER_SHIFT, w1 & VERSION_MASK, h)

    def peek(self, lk: int) -> LockSnapshot:
        """Racy, unsynchronised read for audits after quiescence."""
        w = self.memory.words[self.base + 2 * lk]
        return LockSnapshot(w >> OWNER_SHIFT, w & VERSION_MASK,
                            self.memory.words[self.base + 2 * lk + 1])

    def try_acquire(self, lk: int, expected_sver: int, tid: int) -> bool:
        if expected_sver & 1:
            raise ContractViolation("expected version must be even")
        if tid == 0:
            raise ContractViolation("tid 0 cannot own locks")
        return self.memory.cas(self.base + 2 * lk, expected_sver,
                               pack_lock(tid, expected_sver + 1), "acquire")

    def release(self, lk: int, tid: int) -> None:
        addr = self.base + 2 * lk
        w = self.memory.words[addr]
        if not (w & 1) or (w >> OWNER_SHIFT) != tid:
            raise ContractViolation(f"thread {tid} releasing lock {lk} it does not own")
        self.memory.store(addr, pack_lock(0, (w & VERSION_MASK) + 1), "release")

    def owned_by(self, addr: int, tid: int) -> bool:
        w = self.memory.words[self.base + 2 * self.get_lock(addr)]
        return bool(w & 1) and (w >> OWNER_SHIFT) == tid

    # -- hardware-side operations ------------------------------------------
    def htm_read_ok(self, tx: HwTx, lk: int, tid: int) -> bool:
        """Instrumented read: unlocked or locked by ``tid``."""
        w = self.memory.tx_load(tx, self.base + 2 * lk, "lock")
        return not (w & 1) or (w >> OWNER_SHIFT) == tid

    def htm_acquire(self, tx: HwTx, lk: int, tid: int, sp_mode: bool) -> bool:
        mem = self.memory
        waddr = self.base + 2 * lk
        w = mem.tx_load(tx, waddr, "lock")
        if w & 1:
            return (w >> OWNER_SHIFT) == tid
        mem.tx_store(tx, waddr, pack_lock(tid, (w & VERSION_MASK) + 1), "acquire")
        if sp_mode:
            h = mem.tx_load(tx, waddr + 1, "hlock")
            mem.tx_store(tx, waddr + 1, h + 1, "hlock")
        return True
