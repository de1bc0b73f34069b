"""Crash injection: seeded container fuzzing and commit-pipeline enumeration."""
from __future__ import annotations

import itertools
import random
import time
from dataclasses import dataclass, field
from typing import Optional

from ..containers.abtree import TxABTree
from ..containers.hashmap import TxHashMap
from ..htmsim import HtmConfig
from ..pheap import BgFlushPolicy, HeapConfig, PersistentHeap
from ..tmcore import TransactionalMemory, TxConfig, recover_words
from .history import LpRecorder
from .sched import Scheduler

STRUCTURES = {"hashmap": TxHashMap, "abtree": TxABTree}


@dataclass
class OpRecord:
    tid: int
    kind: str            # get, insert, remove
    key: int
    value: int
    result: object = None
    txn: int = 0


@dataclass
class FuzzRun:
    seed: int
    structure: str
    threads: int
    read_pct: int
    variant: str
    crash_step: int
    completed: bool
    ops_committed: int
    inflight: int
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


@dataclass
class FuzzReport:
    runs: list[FuzzRun]
    elapsed: float

    @property
    def violations(self) -> list[FuzzRun]:
        return [r for r in self.runs if not r.ok]

    def to_json(self) -> dict:
        return {"runs": len(self.runs), "violations": [r.__dict__ for r in self.violations],
                "elapsed": self.elapsed}


def _make(structure: str, tm: TransactionalMemory, ctx, keys: int):
    if structure == "hashmap":
        return TxHashMap.create(tm, keys)
    return TxABTree.create(tm, ctx)


def _apply(d: dict, op: OpRecord):
    if op.kind == "get":
        return d.get(op.key)
    if op.kind == "insert":
        if op.key in d:
            return False
        d[op.key] = op.value
        return True
    if op.key in d:
        del d[op.key]
        return True
    return False


def _replay_matches(base: dict, ops: list[tuple[tuple, OpRecord, bool]], final: dict) -> Optional[str]:
    d = dict(base)
    for _, op, committed in ops:
        res = _apply(d, op)
        if committed and res != op.result:
            return f"T{op.tid} {op.kind}({op.key}) returned {op.result!r}, oracle {res!r}"
    if d != final:
        return "recovered contents differ from the oracle"
    return None


def fuzz_once(seed: int, structure: str = "hashmap", eadr: bool = False,
              threads: Optional[int] = None, read_pct: Optional[int] = None,
              bg_flush_p: float = 0.01) -> FuzzRun:
    """One seeded run: concurrent ops, a crash at a random scheduling point,
    recovery, structural checks and an LP-ordered oracle replay."""
    rng = random.Random(seed)
    threads = threads or rng.randint(2, 4)
    read_pct = rng.choice([0, 50, 90]) if read_pct is None else read_pct
    variant = rng.choice(["weak", "sp"])
    keys = rng.choice([16, 64])
    nops = rng.randint(4, 24)
    config = TxConfig(variant=variant, lock_mode=rng.choice(["colocated", "hashed"]),
                      table_size=1 << rng.choice([4, 10]),
                      max_hw_attempts=rng.choice([0, 1, 10]))
    htm = HtmConfig(spurious_probability=rng.choice([0.0, 0.05, 0.3]), rng_seed=seed)
    heap_cfg = HeapConfig(1 << 14, threads + 1, eadr_mode=eadr,
                          bg_flush_policy=BgFlushPolicy.seeded(bg_flush_p, seed))
    tm = TransactionalMemory(heap_cfg, config, htm)
    ctxs = [tm.register_thread(t + 1) for t in range(threads)]
    cont = _make(structure, tm, ctxs[0], keys)
    base: dict[int, int] = {}
    for k in rng.sample(range(keys), keys // 2):
        cont.insert(ctxs[0], k, k + 1)
        base[k] = k + 1

    rec = LpRecorder()
    tm.recorder = rec
    logs: list[list[OpRecord]] = [[] for _ in range(threads)]
    pending: list[Optional[OpRecord]] = [None] * threads
    plans = []
    for t in range(threads):
        plan = []
        for i in range(nops):
            k = rng.randrange(keys)
            r = rng.randrange(100)
            kind = "get" if r < read_pct else ("insert" if rng.random() < 0.5 else "remove")
            plan.append(OpRecord(t + 1, kind, k, (t + 1) * 1_000_000 + i + 1))
        plans.append(plan)

    def worker(t: int):
        ctx = ctxs[t]
        for op in plans[t]:
            pending[t] = op
            if op.kind == "get":
                op.result = cont.get(ctx, op.key)
            elif op.kind == "insert":
                op.result = cont.insert(ctx, op.key, op.value)
            else:
                op.result = cont.remove(ctx, op.key)
            op.txn = ctx.last_txn
            logs[t].append(op)
            pending[t] = None

    sched = Scheduler(tm.memory)
    for t in range(threads):
        sched.spawn(t + 1, lambda t=t: worker(t))
    crash_step = rng.randrange(threads * nops * 90)
    completed = sched.run_random(rng, max_steps=crash_step,
                                 switch_prob=rng.choice([1.0, 0.3, 0.05]))
    image = tm.heap.crash(seed=rng.randrange(1 << 32))
    inflight = []
    for t, ctx in enumerate(ctxs):
        tx = ctx.tx
        if tx is not None and tx.txn in rec.lp_at and pending[t] is not None:
            pending[t].txn = tx.txn
            inflight.append(pending[t])
    sched.crash()

    run = FuzzRun(seed, structure, threads, read_pct, variant, crash_step, completed,
                  sum(len(l) for l in logs), len(inflight))
    cls = STRUCTURES[structure]
    try:
        tm2, _ = TransactionalMemory.recover(
            image, heap_cfg, TxConfig(variant=variant, lock_mode=config.lock_mode,
                                      table_size=config.table_size),
            live_iter=lambda t: cls.attach(t).live_objects())
    except Exception as exc:  # structural corruption surfaces here
        run.problems.append(f"recovery failed: {exc!r}")
        return run
    cont2 = cls.attach(tm2)
    problems = cont2.check()
    if problems:
        run.problems.extend(problems)
        return run
    final = cont2.contents()

    committed = [(rec.lp_at.get(op.txn), op, True) for log in logs for op in log]
    missing = [op for _, op, _ in committed if _ is None]
    committed = [c for c in committed if c[0] is not None]
    if missing:
        run.problems.append(f"{len(missing)} completed ops without a linearization point")
        return run
    verdict = None
    for r in range(len(inflight) + 1):
        for subset in itertools.combinations(inflight, r):
            seq = committed + [(rec.lp_at[op.txn], op, False) for op in subset]
            seq.sort(key=lambda e: e[0])
            verdict = _replay_matches(base, seq, final)
            if verdict is None:
                break
        if verdict is None:
            break
    if verdict is not None:
        run.problems.append(verdict)
        return run

    # the recovered instance must stay usable: fresh allocations may not
    # collide with recovered live objects
    ctx2 = tm2.register_thread(1)
    for k in range(keys):
        if k not in final:
            cont2.insert(ctx2, k, 7)
            final[k] = 7
    post = cont2.check()
    if post or cont2.contents() != final:
        run.problems.append(f"post-recovery operations corrupted the structure: {post}")
    return run


def crash_fuzz(seeds, structure: str = "hashmap", eadr: bool = False, **kw) -> FuzzReport:
    t0 = time.perf_counter()
    runs = [fuzz_once(s, structure, eadr, **kw) for s in seeds]
    return FuzzReport(runs, time.perf_counter() - t0)


# -- commit-pipeline enumeration ---------------------------------------------------

@dataclass
class CrashPoint:
    step: int
    point: str
    after_durable: bool
    outcomes: set[str]


@dataclass
class EnumerationReport:
    path: str
    eadr: bool
    points: list[CrashPoint]

    @property
    def ok(self) -> bool:
        for p in self.points:
            if not p.outcomes <= {"pre", "post"}:
                return False
            if p.after_durable and p.outcomes != {"post"}:
                return False
        return True


def _enum_setup(path: str, eadr: bool, nwrites: int):
    config = TxConfig(lock_mode="colocated", max_hw_attempts=1 if path == "hw" else 0)
    tm = TransactionalMemory(HeapConfig(64, 4, eadr_mode=eadr), config)
    ctx = tm.register_thread(1)
    pre = {a: 10 + a for a in range(nwrites)}
    for a, v in pre.items():
        tm.poke(a, v)
    post = {a: 100 + a for a in range(nwrites)}

    def body(tx):
        for a, v in post.items():
            tx.write(a, v)
    sched = Scheduler(tm.memory)
    sched.trace = []
    sched.spawn(1, lambda: tm.run_transaction(ctx, body))
    return tm, sched, pre, post


def enumerate_crash_points(path: str = "sw", eadr: bool = False, nwrites: int = 3,
                           max_subsets: int = 64) -> EnumerationReport:
    """Crash a single-writer commit after every scheduling point, with every
    subset of not-yet-fenced lines surviving, and classify the recovered state."""
    tm, sched, _, _ = _enum_setup(path, eadr, nwrites)
    sched.advance(1)
    trace = list(sched.trace)
    # durable once the version-number line is persisted
    durable_after = None
    seen_pver = False
    for i, (_, p) in enumerate(trace):
        if p.kind == "persist" and p.label == "pver":
            seen_pver = True
            if eadr:
                durable_after = i + 1
                break
        elif seen_pver and p.kind == "persist" and p.label == "fence":
            durable_after = i + 1
            break
    if durable_after is None:
        raise RuntimeError(f"{path} commit never persisted its version number")
    points = []
    for k in range(len(trace) + 1):
        tm, sched, pre, post = _enum_setup(path, eadr, nwrites)
        for _ in range(k):
            sched.step(1)
        dirty = tm.heap.unpersisted_lines()
        outcomes: set[str] = set()
        subsets = list(itertools.chain.from_iterable(
            itertools.combinations(dirty, r) for r in range(len(dirty) + 1)))
        if len(subsets) > max_subsets:
            subsets = random.Random(k).sample(subsets, max_subsets)
        for keep in subsets:
            kept = set(keep)
            image = tm.heap.crash(chooser=lambda line, _s: line in kept)
            words = recover_words(image).words
            state = {a: words[a] for a in pre}
            outcomes.add("pre" if state == pre else "post" if state == post else f"torn:{state}")
        label = trace[k - 1][1].label if k else "start"
        points.append(CrashPoint(k, label, k >= durable_after, outcomes))
        sched.crash()
    return EnumerationReport(path, eadr, points)


# -- motivating example: ordering of plain persistent writes ---------------------------

def _plain_write(heap: PersistentHeap, addr: int, value: int) -> None:
    """A persistent store outside any transaction (tagged as committed)."""
    heap.store(addr, value)
    heap.write_slot(addr, value, 0, value)


def linked_list_demo(use_tm: bool) -> bool:
    """Append a node to a persistent list and crash with only the head line
    written back.  Returns True if the recovered list is consistent.

    Layout: word 1 = head pointer; node at 32 = [value, next]."""
    node, head = 32, 1
    # the background write-back adversary persists only the head's line
    policy = BgFlushPolicy.adversarial(lambda lines: [ln for ln in lines if ln == 1 + 2 + head])
    tm = TransactionalMemory(HeapConfig(64, 2, bg_flush_policy=policy),
                             TxConfig(lock_mode="colocated", max_hw_attempts=0))
    ctx = tm.register_thread(1)
    if use_tm:
        def body(tx):
            tx.write(head, node)
            tx.write(node, 42)
            tx.write(node + 1, 0)
        # crash before the commit's fence: park right there
        sched = Scheduler(tm.memory)
        sched.spawn(1, lambda: tm.run_transaction(ctx, body))
        sched.advance(1, lambda p: p.label == "fence")
        image = tm.heap.crash(seed=None)
        sched.crash()
    else:
        heap = tm.heap
        _plain_write(heap, head, node)     # publish first: the bad order
        _plain_write(heap, node, 42)
        _plain_write(heap, node + 1, 0)
        image = heap.crash(seed=None)
    words = recover_words(image).words
    return words[head] == 0 or words[words[head]] == 42
