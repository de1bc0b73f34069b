"""Simulated non-volatile heap.

Two layers are modelled:

* the *volatile* user words (DRAM), stored in the shared :class:`Memory` so
  that hardware transactions and strong isolation see them;
* the *persistent* region, organised in 64-byte lines: one header line, one
  line per thread holding its persistent version number, and one Trinity
  slot line ``(new, old, pver)`` per user word.  Each persistent line has a
  cache copy and an NVM copy; ``flush_line``/``fence``/background flushes
  move cache content to NVM and :meth:`PersistentHeap.crash` produces the
  NVM image a power failure would leave behind.

Lines persist atomically, so a crash image holds, per line, either its last
persisted content or its current cache content and never a mix.
"""
from __future__ import annotations

import enum
import random
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .htmsim import AbortCode, ContractViolation, Memory

LINE_BYTES = 64
HEADER_LINES = 1
MAGIC = b"NVHALT01"
FORMAT_VERSION = 1

TID_BITS = 16
SEQ_BITS = 48
SEQ_MASK = (1 << SEQ_BITS) - 1

# thread slot 0 belongs to the formatter; its version is fixed at 1 so that
# slots tagged (0, 0) always count as committed.
SYSTEM_TID = 0


def pack_pver(tid: int, seq: int) -> int:
    if not 0 <= tid < (1 << TID_BITS):
        raise ValueError(f"tid {tid} does not fit in {TID_BITS} bits")
    if not 0 <= seq <= SEQ_MASK:
        raise ValueError(f"seq {seq} does not fit in {SEQ_BITS} bits")
    return (tid << SEQ_BITS) | seq


def unpack_pver(pver: int) -> tuple[int, int]:
    return pver >> SEQ_BITS, pver & SEQ_MASK


class LineState(enum.IntEnum):
    CLEAN = 0
    DIRTY = 1
    FLUSH_PENDING = 2


@dataclass(frozen=True)
class BgFlushPolicy:
    """Background write-back policy.

    ``kind`` is ``"off"``, ``"seeded"`` (each dirty line written back with
    ``probability`` per tick) or ``"adversarial"`` (``callback(dirty_lines)``
    returns the lines to write back).
    """

    kind: str = "off"
    probability: float = 0.0
    seed: int = 0
    callback: Optional[Callable[[list[int]], Iterable[int]]] = None

    @classmethod
    def off(cls) -> "BgFlushPolicy":
        return cls()

    @classmethod
    def seeded(cls, probability: float, seed: int = 0) -> "BgFlushPolicy":
        if not 0.0 <= probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        return cls("seeded", probability, seed)

    @classmethod
    def adversarial(cls, callback) -> "BgFlushPolicy":
        return cls("adversarial", callback=callback)

    @classmethod
    def flush_all(cls) -> "BgFlushPolicy":
        return cls.adversarial(lambda lines: lines)


@dataclass
class HeapConfig:
    word_count: int
    thread_slots: int = 64
    line_bytes: int = LINE_BYTES
    eadr_mode: bool = False
    bg_flush_policy: BgFlushPolicy = field(default_factory=BgFlushPolicy)
    image_path: Optional[Union[str, Path]] = None
    # simulated fence latency in seconds (sleep outside every lock)
    fence_latency: float = 0.0

    def __post_init__(self):
        if self.word_count <= 0:
            raise ValueError("word_count must be positive")
        if not 1 <= self.thread_slots < (1 << TID_BITS):
            raise ValueError("thread_slots must lie in [1, 2^16)")
        if self.line_bytes != LINE_BYTES:
            raise ValueError("line_bytes is fixed at 64")


Slot = tuple[int, int, int]  # (new, old, pver)


@dataclass
class PersistentImage:
    """Content of NVM after a crash (or at any quiescent point)."""

    word_count: int
    thread_slots: int
    pver: list[int]
    slots: list[Slot]

    _HEADER = struct.Struct("<8sIQI")
    _SLOT = struct.Struct("<QQQ")
    _WORD = struct.Struct("<Q")

    @classmethod
    def blank(cls, word_count: int, thread_slots: int) -> "PersistentImage":
        pver = [0] * thread_slots
        pver[SYSTEM_TID] = 1
        return cls(word_count, thread_slots, pver, [(0, 0, 0)] * word_count)

    @property
    def size_bytes(self) -> int:
        return (HEADER_LINES + self.thread_slots + self.word_count) * LINE_BYTES

    def to_bytes(self) -> bytes:
        out = bytearray(self.size_bytes)
        self._HEADER.pack_into(out, 0, MAGIC, FORMAT_VERSION, self.word_count,
                               self.thread_slots)
        off = HEADER_LINES * LINE_BYTES
        for v in self.pver:
            self._WORD.pack_into(out, off, v)
            off += LINE_BYTES
        for new, old, pver in self.slots:
            self._SLOT.pack_into(out, off, new, old, pver)
            off += LINE_BYTES
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PersistentImage":
        if len(data) < LINE_BYTES:
            raise ValueError("image shorter than its header")
        magic, version, word_count, thread_slots = cls._HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ValueError(f"bad image magic {magic!r}")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported image format version {version}")
        expected = (HEADER_LINES + thread_slots + word_count) * LINE_BYTES
        if len(data) != expected:
            raise ValueError(f"image is {len(data)} bytes, header implies {expected}")
        off = HEADER_LINES * LINE_BYTES
        pver = []
        for _ in range(thread_slots):
            pver.append(cls._WORD.unpack_from(data, off)[0])
            off += LINE_BYTES
        slots = []
        for _ in range(word_count):
            slots.append(cls._SLOT.unpack_from(data, off))
            off += LINE_BYTES
        return cls(word_count, thread_slots, pver, slots)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PersistentImage":
        return cls.from_bytes(Path(path).read_bytes())


class PersistentHeap:
    """Volatile user words plus the cache/NVM model of the persistent region."""

    def __init__(self, config: HeapConfig, memory: Optional[Memory] = None,
                 image: Optional[PersistentImage] = None):
        self.config = config
        self.memory = memory if memory is not None else Memory()
        self.word_count = config.word_count
        self.thread_slots = config.thread_slots
        self.base = self.memory.reserve(config.word_count)
        self.eadr = config.eadr_mode

        if image is None:
            image = PersistentImage.blank(config.word_count, config.thread_slots)
        elif (image.word_count, image.thread_slots) != (config.word_count, config.thread_slots):
            raise ValueError("image geometry does not match the heap config")
        self._slot_base = HEADER_LINES + config.thread_slots
        nlines = self._slot_base + config.word_count
        # line content: int for version lines, Slot tuple for slot lines
        self._nvm: list = [None] * nlines
        self._nvm[HEADER_LINES:self._slot_base] = list(image.pver)
        self._nvm[self._slot_base:] = list(image.slots)
        self._cache: list = list(self._nvm)
        self._state = [LineState.CLEAN] * nlines
        self._dirty: set[int] = set()
        self._pending: dict[int, dict[int, object]] = {}
        self._lock = threading.Lock()
        self._bg_rng = random.Random(config.bg_flush_policy.seed)
        # set by the TM in debug mode: (addr, tid) -> lock held?
        self.owner_check: Optional[Callable[[int, int], bool]] = None
        self.stats = {"flushes": 0, "fences": 0, "bg_flushed": 0}

    # -- geometry ---------------------------------------------------------
    @property
    def line_count(self) -> int:
        return len(self._state)

    def vmem_addr_to_pmem(self, addr: int) -> int:
        if not 0 <= addr < self.word_count:
            raise ContractViolation(f"address {addr} outside heap of {self.word_count} words")
        return self._slot_base + addr

    def pver_line(self, tid: int) -> int:
        if not 0 <= tid < self.thread_slots:
            raise ContractViolation(f"tid {tid} outside thread slots")
        return HEADER_LINES + tid

    def line_state(self, line: int) -> LineState:
        return self._state[line]

    # -- volatile words ---------------------------------------------------
    def _bounds(self, addr: int) -> None:
        if not 0 <= addr < self.word_count:
            raise ContractViolation(f"address {addr} outside heap of {self.word_count} words")

    def load(self, addr: int) -> int:
        self._bounds(addr)
        return self.memory.load(self.base + addr)

    def store(self, addr: int, value: int) -> None:
        self._bounds(addr)
        self.memory.store(self.base + addr, value)

    # -- persistent lines -------------------------------------------------
    def _hook(self, label: str, line: int) -> None:
        hook = self.memory.hook
        if hook is not None:
            hook("persist", label, line)

    def _write_line(self, line: int, content) -> None:
        # self._lock held
        self._cache[line] = content
        if self.eadr:
            # the cache is persistent: a line write is durable once performed
            self._nvm[line] = content
            return
        self._state[line] = LineState.DIRTY
        self._dirty.add(line)

    def write_slot(self, addr: int, old: int, pver: int, new: int) -> None:
        """Write the slot fields old, pver, new (in that order, one line)."""
        line = self.vmem_addr_to_pmem(addr)
        if self.owner_check is not None and not self.owner_check(addr, pver >> SEQ_BITS):
            raise ContractViolation(f"write_slot({addr}) without holding its lock")
        self._hook("slot", addr)
        with self._lock:
            self._write_line(line, (new, old, pver))
        self._maybe_bg_tick()

    def write_pver(self, tid: int, value: int) -> None:
        line = self.pver_line(tid)
        self._hook("pver", tid)
        with self._lock:
            self._write_line(line, value)
        self._maybe_bg_tick()

    def read_slot(self, addr: int) -> Slot:
        return self._cache[self.vmem_addr_to_pmem(addr)]

    def read_pver(self, tid: int) -> int:
        return self._cache[self.pver_line(tid)]

    def format_word(self, addr: int, value: int) -> None:
        """Initialise a word in DRAM and NVM alike (construction / recovery only)."""
        line = self.vmem_addr_to_pmem(addr)
        self.memory.raw_store(self.base + addr, value)
        slot = (value, value, 0)
        with self._lock:
            self._cache[line] = slot
            self._nvm[line] = slot
            self._state[line] = LineState.CLEAN
            self._dirty.discard(line)

    def flush_line(self, line: int, tid: int = 0) -> None:
        if self.eadr:
            return
        self._hook("flush", line)
        tx = self.memory.active_tx(tid)
        if tx is not None:
            self.memory.doom(tx, AbortCode.EXPLICIT_FLUSH)
        with self._lock:
            self.stats["flushes"] += 1
            if self._state[line] == LineState.CLEAN:
                return
            self._state[line] = LineState.FLUSH_PENDING
            self._pending.setdefault(tid, {})[line] = self._cache[line]

    def fence(self, tid: int = 0) -> None:
        if self.eadr:
            return
        self._hook("fence", tid)
        with self._lock:
            self.stats["fences"] += 1
            pending = self._pending.pop(tid, None)
            if not pending:
                return
            for line, content in pending.items():
                self._nvm[line] = content
                if self._state[line] == LineState.FLUSH_PENDING and self._cache[line] is content:
                    self._state[line] = LineState.CLEAN
                    self._dirty.discard(line)
        if self.config.fence_latency > 0.0:
            time.sleep(self.config.fence_latency)

    def _maybe_bg_tick(self) -> None:
        if self.config.bg_flush_policy.kind != "off" and not self.eadr:
            self.background_flush_tick()

    def background_flush_tick(self) -> None:
        policy = self.config.bg_flush_policy
        if policy.kind == "off" or self.eadr:
            return
        with self._lock:
            if not self._dirty:
                return
            lines = sorted(self._dirty)
            if policy.kind == "seeded":
                p = policy.probability
                if p <= 0.0:
                    return
                chosen = [ln for ln in lines if p >= 1.0 or self._bg_rng.random() < p]
            else:
                chosen = list(policy.callback(lines))
            for line in chosen:
                self._nvm[line] = self._cache[line]
            self.stats["bg_flushed"] += len(chosen)

    def persist_all(self) -> None:
        """Write back every line (a clean shutdown)."""
        with self._lock:
            for line in self._dirty:
                self._nvm[line] = self._cache[line]
                self._state[line] = LineState.CLEAN
            self._dirty.clear()
            self._pending.clear()

    # -- crash ------------------------------------------------------------
    def crash(self, seed: Optional[int] = 0,
              chooser: Optional[Callable[[int, LineState], bool]] = None) -> PersistentImage:
        """Return the NVM image a power failure would leave.

        Every Dirty or FlushPending line independently either reaches NVM or
        not; ``chooser(line, state)`` decides, else a ``random.Random(seed)``
        coin.  ``seed=None`` keeps every unpersisted line out.
        """
        rng = random.Random(seed) if seed is not None else None
        with self._lock:
            nvm = list(self._nvm) if not self.eadr else list(self._cache)
            if not self.eadr:
                for line in sorted(self._dirty):
                    if chooser is not None:
                        take = chooser(line, self._state[line])
                    elif rng is not None:
                        take = rng.random() < 0.5
                    else:
                        take = False
                    if take:
                        nvm[line] = self._cache[line]
        image = PersistentImage(self.word_count, self.thread_slots,
                                nvm[HEADER_LINES:self._slot_base], nvm[self._slot_base:])
        if self.config.image_path is not None:
            image.save(self.config.image_path)
        return image

    def snapshot(self) -> PersistentImage:
        """Current NVM content, leaving every unpersisted line out."""
        with self._lock:
            nvm = list(self._cache if self.eadr else self._nvm)
        return PersistentImage(self.word_count, self.thread_slots,
                               nvm[HEADER_LINES:self._slot_base], nvm[self._slot_base:])

    def unpersisted_lines(self) -> list[int]:
        with self._lock:
            return sorted(self._dirty)
