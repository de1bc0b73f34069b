"""Scripted interleavings and randomized small schedules.

Scenario text, one step per line (``#`` starts a comment)::

    init a3 7                  initial durable value of word 3
    T1 begin sw|hw             start an attempt on the given path
    T1 read a3
    T1 write a3 42
    T1 commit                  commit (or resume a parked commit) to completion
    T1 commit-to LABEL [aN]    commit but park just before the point LABEL
    T1 abort                   voluntary abort
    crash [seed N]             power failure; unfenced lines are lost unless
                               a seed is given (then each survives by coin)

Each script line runs atomically with respect to the other threads except
``commit-to``, which leaves its thread parked inside the commit pipeline.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..htmsim import HtmAbort, HtmConfig
from ..pheap import HeapConfig
from ..tmcore import (TransactionalMemory, TxAbort, TxConfig, Variant, VoluntaryAbort,
                      recover_words)
from .checkers import Verdict, check_durable, check_serializable
from .history import History
from .sched import Point, Scheduler


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    tid: int            # 0 for init / crash
    op: str
    args: tuple = ()


_ADDR = re.compile(r"^a(\d+)$")


def _addr(tok: str, lineno: int) -> int:
    m = _ADDR.match(tok)
    if not m:
        raise ScenarioError(f"line {lineno}: expected an address like a3, got {tok!r}")
    return int(m.group(1))


def parse_scenario(text: str) -> list[Step]:
    steps = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        head = tok[0]
        if head == "init" and len(tok) == 3:
            steps.append(Step(0, "init", (_addr(tok[1], lineno), int(tok[2], 0))))
            continue
        if head == "crash":
            if len(tok) == 1:
                steps.append(Step(0, "crash", (None,)))
            elif len(tok) == 3 and tok[1] == "seed":
                steps.append(Step(0, "crash", (int(tok[2]),)))
            else:
                raise ScenarioError(f"line {lineno}: bad crash step")
            continue
        m = re.match(r"^T(\d+)$", head)
        if not m or len(tok) < 2:
            raise ScenarioError(f"line {lineno}: cannot parse {line!r}")
        tid = int(m.group(1))
        op, rest = tok[1], tok[2:]
        if op == "begin" and len(rest) == 1 and rest[0] in ("sw", "hw"):
            steps.append(Step(tid, "begin", (rest[0],)))
        elif op == "read" and len(rest) == 1:
            steps.append(Step(tid, "read", (_addr(rest[0], lineno),)))
        elif op == "write" and len(rest) == 2:
            steps.append(Step(tid, "write", (_addr(rest[0], lineno), int(rest[1], 0))))
        elif op in ("commit", "abort") and not rest:
            steps.append(Step(tid, op))
        elif op == "commit-to" and len(rest) in (1, 2):
            target = _addr(rest[1], lineno) if len(rest) == 2 else None
            steps.append(Step(tid, "commit-to", (rest[0], target)))
        else:
            raise ScenarioError(f"line {lineno}: cannot parse {line!r}")
    return steps


@dataclass
class ScenarioResult:
    history: History
    tm: TransactionalMemory
    init: dict[int, int]
    outcomes: list[tuple[int, str, str]] = field(default_factory=list)
    crashed: bool = False
    recovered: Optional[list[int]] = None
    serializable: Optional[Verdict] = None
    durable: Optional[Verdict] = None

    def outcome_of(self, tid: int) -> list[str]:
        return [o for t, _, o in self.outcomes if t == tid]

    def to_json(self) -> dict:
        return {
            "outcomes": [{"tid": t, "step": s, "result": o} for t, s, o in self.outcomes],
            "crashed": self.crashed,
            "serializable": self.serializable.to_json() if self.serializable else None,
            "durable": self.durable.to_json() if self.durable else None,
        }


def _guard(fn):
    def run():
        try:
            return ("ok", fn())
        except (TxAbort, HtmAbort, VoluntaryAbort) as exc:
            return ("abort", exc)
    return run


def _describe(exc: BaseException) -> str:
    if isinstance(exc, TxAbort):
        return f"abort:{exc.reason.value}"
    if isinstance(exc, HtmAbort):
        return f"abort:{exc.code.value}"
    return "abort:Voluntary"


def run_scenario(script: str | Sequence[Step], config: Optional[TxConfig] = None,
                 htm: Optional[HtmConfig] = None, words: int = 64, thread_slots: int = 8,
                 eadr: bool = False) -> ScenarioResult:
    """Execute a scenario deterministically and check the resulting history."""
    steps = parse_scenario(script) if isinstance(script, str) else list(script)
    config = config or TxConfig(lock_mode="colocated")
    tm = TransactionalMemory(HeapConfig(words, thread_slots, eadr_mode=eadr), config, htm)
    hist = History()
    tm.recorder = hist
    init: dict[int, int] = {}
    for s in steps:
        if s.op == "init":
            addr, value = s.args
            tm.poke(addr, value)
            init[addr] = value
    sched = Scheduler(tm.memory)
    res = ScenarioResult(hist, tm, init)
    ctxs = {}
    handles: dict[int, object] = {}
    parked: set[int] = set()

    def finish(tid: int, label: str) -> None:
        sim = sched.threads[tid]
        sched.advance(tid)
        parked.discard(tid)
        status, payload = sim.result
        res.outcomes.append((tid, label, "ok" if status == "ok" else _describe(payload)))
        handles.pop(tid, None)

    for s in steps:
        if s.op == "init":
            continue
        if s.op == "crash":
            seed = s.args[0]
            image = tm.heap.crash(seed=seed)
            hist.crash()
            sched.crash()
            res.crashed = True
            res.recovered = recover_words(image).words
            break
        tid = s.tid
        if tid not in ctxs:
            ctxs[tid] = tm.register_thread(tid)
            sched.spawn_worker(tid)
        ctx = ctxs[tid]
        label = " ".join([s.op, *(str(a) for a in s.args if a is not None)])
        if tid in parked:
            if s.op != "commit":
                raise ScenarioError(f"T{tid} is parked mid-commit; only 'commit' may follow")
            finish(tid, label)
            continue
        if s.op == "begin":
            if tid in handles:
                raise ScenarioError(f"T{tid} began twice")
            handles[tid] = sched.call(tid, lambda ctx=ctx, p=s.args[0]: tm.begin(ctx, p))
            res.outcomes.append((tid, label, "ok"))
            continue
        tx = handles.get(tid)
        if tx is None:
            res.outcomes.append((tid, label, "skipped"))
            continue
        if s.op == "read":
            fn = lambda tx=tx, a=s.args[0]: tx.read(a)
        elif s.op == "write":
            fn = lambda tx=tx, a=s.args[0], v=s.args[1]: tx.write(a, v)
        elif s.op == "abort":
            fn = tx.abort
        else:
            fn = tx.commit
        stop = None
        if s.op == "commit-to":
            want, target = s.args

            def stop(p: Point, want=want, target=target) -> bool:
                return p.label == want and (target is None or p.addr == target)
        status = sched.call(tid, _guard(fn), stop)
        if s.op == "commit-to" and sched.threads[tid].pending is not None \
                and not sched.threads[tid].idle:
            parked.add(tid)
            res.outcomes.append((tid, label, "parked"))
            continue
        kind, payload = status
        if kind == "ok":
            res.outcomes.append((tid, label, "ok" if s.op != "read" else f"ok:{payload}"))
            if s.op in ("commit", "commit-to"):
                handles.pop(tid, None)
        else:
            res.outcomes.append((tid, label, _describe(payload)))
            handles.pop(tid, None)
    if not res.crashed:
        for tid in sorted(parked):
            finish(tid, "commit (drain)")
        sched.shutdown()
    res.serializable = check_serializable(hist, init)
    if res.crashed:
        res.durable = check_durable(hist, res.recovered, init)
    return res


# -- named scenarios --------------------------------------------------------------

# Software writer parked between its two volatile stores; a hardware reader
# that ignores lock metadata observes half of the write set.
TORN_READ = """
init a0 0
init a1 0
T1 begin sw
T1 write a0 1
T1 write a1 1
T1 commit-to store a1
T2 begin hw
T2 read a0
T2 read a1
T2 commit
T1 commit
"""

# Hardware writer commits in cache but has not persisted yet; a software
# transaction reads its value, writes a dependent word and persists; crash.
UNPERSISTED_DEPENDENCY = """
init a0 0
init a1 0
init a2 0
T1 begin hw
T1 write a0 1
T1 commit-to persist
T2 begin sw
T2 read a0
T2 write a2 1
T2 commit
crash
"""

# One contention round: each transaction reads what the other writes and both
# reach validation while holding their write locks.
CROSS_ROUND = """
T1 begin sw
T2 begin sw
T1 read a0
T2 read a1
T1 write a1 {v1}
T2 write a0 {v2}
T1 commit-to validate
T2 commit-to validate
T1 commit
T2 commit
"""


@dataclass
class RoundsReport:
    rounds: int
    commits_per_round: list[int]
    aborts_per_round: list[int]

    @property
    def all_aborted(self) -> bool:
        return all(c == 0 for c in self.commits_per_round)

    @property
    def every_round_commits(self) -> bool:
        return all(c >= 1 for c in self.commits_per_round)


def run_cross_rounds(variant: Variant | str, rounds: int = 100,
                     lock_mode: str = "colocated") -> RoundsReport:
    """Replay the two-transaction contention round ``rounds`` times on one TM."""
    config = TxConfig(variant=variant, lock_mode=lock_mode)
    tm = TransactionalMemory(HeapConfig(64, 8), config)
    sched = Scheduler(tm.memory)
    ctxs = {t: tm.register_thread(t) for t in (1, 2)}
    for t in ctxs:
        sched.spawn_worker(t)
    commits, aborts = [], []

    def at(label):
        return lambda p: p.label == label

    for r in range(rounds):
        txs = {t: sched.call(t, lambda c=ctxs[t]: tm.begin(c, "sw")) for t in ctxs}
        sched.call(1, _guard(lambda: txs[1].read(0)))
        sched.call(2, _guard(lambda: txs[2].read(1)))
        sched.call(1, _guard(lambda: txs[1].write(1, 2 * r + 1)))
        sched.call(2, _guard(lambda: txs[2].write(0, 2 * r + 2)))
        sched.call(1, _guard(txs[1].commit), at("validate"))
        sched.call(2, _guard(txs[2].commit), at("validate"))
        ok = 0
        for t in (1, 2):
            sched.advance(t)
            kind, _ = sched.threads[t].result
            ok += kind == "ok"
        commits.append(ok)
        aborts.append(2 - ok)
    sched.shutdown()
    return RoundsReport(rounds, commits, aborts)


# -- randomized small schedules ------------------------------------------------------

@dataclass
class ScheduleResult:
    seed: int
    history: History
    verdict: Verdict
    completed: bool
    programs: list


def random_programs(rng: random.Random, max_txns: int = 4, max_words: int = 8,
                    max_ops: int = 4) -> list[list[tuple]]:
    nthreads = rng.randint(2, max_txns)
    nwords = rng.randint(2, max_words)
    progs = []
    for t in range(nthreads):
        ops = []
        for i in range(rng.randint(1, max_ops)):
            a = rng.randrange(nwords)
            if rng.random() < 0.5:
                ops.append(("r", a))
            else:
                ops.append(("w", a, (t + 1) * 100 + i + 1))
        progs.append(ops)
    return progs


def run_random_schedule(seed: int, variant: Variant | str = Variant.WEAK,
                        spurious_p: float = 0.0, lock_mode: Optional[str] = None,
                        max_steps: int = 200_000, **overrides) -> ScheduleResult:
    """One random program set, each thread one retried transaction, under a
    seeded random interleaving; verdict from :func:`check_serializable`."""
    rng = random.Random(seed)
    progs = random_programs(rng)
    lock_mode = lock_mode or rng.choice(["colocated", "hashed"])
    config = TxConfig(variant=variant, lock_mode=lock_mode, table_size=4,
                      max_hw_attempts=rng.choice([0, 1, 3]))
    for k, v in overrides.items():
        setattr(config, k, v)
    htm = HtmConfig(spurious_probability=spurious_p, rng_seed=seed)
    tm = TransactionalMemory(HeapConfig(16, 8), config, htm)
    hist = History()
    tm.recorder = hist
    sched = Scheduler(tm.memory)
    for i, ops in enumerate(progs):
        ctx = tm.register_thread(i + 1)

        def body(tx, ops=ops):
            for op in ops:
                if op[0] == "r":
                    tx.read(op[1])
                else:
                    tx.write(op[1], op[2])

        sched.spawn(i + 1, lambda ctx=ctx, body=body: tm.run_transaction(ctx, body))
    completed = sched.run_random(rng, max_steps=max_steps,
                                 switch_prob=rng.choice([1.0, 0.5, 0.1]))
    if not completed:
        sched.crash()
    else:
        sched.detach()
    return ScheduleResult(seed, hist, check_serializable(hist), completed, progs)
