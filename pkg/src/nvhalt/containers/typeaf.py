"""Type-A / type-F allocator workload over an array of object pointers.

Phase 1 (type A) links one 16-byte object into each array slot: a pointer
write plus two field writes, allocating the object in the ``alloc`` modes.
Phase 2 (type F) writes both fields and nulls the pointer, freeing the object
in ``alloc_free`` mode.  Each thread owns a disjoint, seeded subset of slots.

In ``prealloc`` mode every thread pre-allocates its objects from its own
pool, in the order it will link them, so object addresses coincide with the
``alloc_free`` run of the same seed.  Any difference in abort counts between
the two modes is then attributable to the allocator alone.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Optional

from ..htmsim import HtmConfig
from ..pheap import HeapConfig
from ..tmcore import TransactionalMemory, TxConfig, TxStats
from ..verify.sched import Scheduler

OBJ_WORDS = 2


class AfMode(str, enum.Enum):
    ALLOC_FREE = "alloc_free"
    ALLOC_ONLY = "alloc_only"
    PREALLOC = "prealloc"


@dataclass
class TypeAfConfig:
    objects: int = 100_000
    threads: int = 4
    mode: AfMode = AfMode.PREALLOC
    lock_mode: str = "colocated"
    table_size: int = 1 << 20
    seed: int = 0
    # random preemption keeps runs deterministic yet interleaved
    switch_prob: float = 0.2
    max_hw_attempts: int = 10

    def __post_init__(self):
        self.mode = AfMode(self.mode)


@dataclass
class TypeAfResult:
    config: TypeAfConfig
    stats: TxStats
    occupancy: dict

    @property
    def aborts(self) -> int:
        return self.stats.total_aborts

    def to_dict(self) -> dict:
        return {"mode": self.config.mode.value, "lock_mode": self.config.lock_mode,
                "objects": self.config.objects, "threads": self.config.threads,
                "seed": self.config.seed, "aborts": self.aborts,
                "stats": self.stats.to_dict(), "occupancy": self.occupancy}


def heap_words_for(objects: int, threads: int) -> int:
    # array + objects, with slack for per-thread private shares and runs
    need = objects + 2 * objects
    return 16 + 2 * need + 1024 * (threads + 2) * 2


def run_type_af(cfg: TypeAfConfig) -> TypeAfResult:
    words = heap_words_for(cfg.objects, cfg.threads)
    slots = cfg.threads + 1
    tm = TransactionalMemory(
        HeapConfig(words, slots),
        TxConfig(lock_mode=cfg.lock_mode, table_size=cfg.table_size,
                 max_hw_attempts=cfg.max_hw_attempts),
        HtmConfig(rng_seed=cfg.seed))
    array = tm.allocator.alloc(0, cfg.objects)
    tm.poke(1, array)
    tm.poke(2, cfg.objects)

    rng = random.Random(cfg.seed)
    order = list(range(cfg.objects))
    rng.shuffle(order)
    subsets = [order[t::cfg.threads] for t in range(cfg.threads)]
    ctxs = [tm.register_thread(t + 1) for t in range(cfg.threads)]

    pre: list[Optional[list[int]]] = [None] * cfg.threads
    if cfg.mode is AfMode.PREALLOC:
        for t, idx in enumerate(subsets):
            pre[t] = [tm.allocator.alloc(t + 1, OBJ_WORDS) for _ in idx]

    mode = cfg.mode

    def worker(t: int):
        ctx = ctxs[t]
        idx = subsets[t]
        objs = pre[t]
        run = tm.run_transaction
        for k, i in enumerate(idx):
            slot = array + i
            obj = objs[k] if objs is not None else None

            def type_a(tx, slot=slot, obj=obj, i=i):
                o = obj if obj is not None else tx.alloc(OBJ_WORDS)
                tx.write(slot, o)
                tx.write(o, i)
                tx.write(o + 1, t)
            run(ctx, type_a)
        for k, i in enumerate(idx):
            slot = array + i

            def type_f(tx, slot=slot, i=i):
                o = tx.read(slot)
                tx.write(o, 0)
                tx.write(o + 1, 0)
                tx.write(slot, 0)
                if mode is AfMode.ALLOC_FREE:
                    tx.free(o)
            run(ctx, type_f)

    sched = Scheduler(tm.memory)
    for t in range(cfg.threads):
        sched.spawn(t + 1, lambda t=t: worker(t))
    sched.run_random(random.Random(cfg.seed ^ 0x5EED), switch_prob=cfg.switch_prob)
    sched.detach()
    tm.allocator.drain()
    return TypeAfResult(cfg, tm.stats(), tm.allocator.occupancy())
