"""Deterministic interleaving of simulated threads.

Each simulated thread is a greenlet.  Every shared-memory primitive of the
TM stack calls ``Memory.hook`` first; the scheduler installs a hook that parks
the calling greenlet and returns control to the driver.  A parked thread is
*about to* perform the operation it parked on, so the driver decides the
global order of every load, store, CAS, HTM access, cache-line write, flush
and fence.  Runs are a pure function of the programs and the driver's choices.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Any, Callable, Optional

import greenlet

from ..htmsim import Memory


class SimulatedCrash(BaseException):
    """Thrown into parked threads to model a power failure."""


@dataclass(frozen=True)
class Point:
    kind: str        # "mem", "tx", "persist", "phase", or "idle"
    label: str
    addr: Optional[int]


IDLE = Point("idle", "idle", None)

StopFn = Callable[[Point], bool]


class SimThread:
    __slots__ = ("tid", "glet", "pending", "done", "result", "steps")

    def __init__(self, tid: int, glet):
        self.tid = tid
        self.glet = glet
        self.pending: Optional[Point] = None
        self.done = False
        self.result: Any = None
        self.steps = 0

    @property
    def idle(self) -> bool:
        return self.pending is IDLE

    @property
    def runnable(self) -> bool:
        return not self.done and self.pending is not IDLE


class Scheduler:
    """Drives simulated threads one scheduling point at a time.

    ``spawn(tid, fn)`` starts a free-running program; ``spawn_worker(tid)``
    starts a thread that executes commands sent with :meth:`call`.
    """

    def __init__(self, memory: Memory):
        self.memory = memory
        self.main = greenlet.getcurrent()
        self.threads: dict[int, SimThread] = {}
        self._by_glet: dict[Any, SimThread] = {}
        self.total_steps = 0
        self.trace: Optional[list[tuple[int, Point]]] = None
        # points the running thread may pass without returning to the driver
        self._grant = 0
        memory.hook = self._hook

    def detach(self) -> None:
        if self.memory.hook == self._hook:
            self.memory.hook = None

    # -- thread side --------------------------------------------------------
    def _hook(self, kind: str, label: str, addr: Optional[int]) -> None:
        sim = self._by_glet.get(greenlet.getcurrent())
        if sim is None:
            return  # driver-side accesses (setup, audits) are not scheduled
        if self._grant > 0:
            self._grant -= 1
            sim.steps += 1
            self.total_steps += 1
            return
        sim.pending = Point(kind, label, addr)
        self.main.switch()

    def _await_command(self, sim: SimThread):
        sim.pending = IDLE
        return self.main.switch()

    # -- driver side ----------------------------------------------------------
    def spawn(self, tid: int, fn: Callable[[], Any]) -> SimThread:
        """Start ``fn`` and run it up to its first scheduling point."""
        if tid in self.threads:
            raise ValueError(f"thread {tid} already spawned")

        def body():
            sim.result = fn()
            sim.done = True
            sim.pending = None

        g = greenlet.greenlet(body, parent=self.main)
        sim = SimThread(tid, g)
        self.threads[tid] = sim
        self._by_glet[g] = sim
        g.switch()
        return sim

    def spawn_worker(self, tid: int) -> SimThread:
        """A thread that loops executing callables sent via :meth:`call`."""
        holder: list[SimThread] = []

        def loop():
            sim = holder[0]
            while True:
                cmd = self._await_command(sim)
                if cmd is None:
                    return None
                sim.result = cmd()

        def body():
            sim.result = loop()
            sim.done = True
            sim.pending = None

        g = greenlet.greenlet(body, parent=self.main)
        sim = SimThread(tid, g)
        holder.append(sim)
        self.threads[tid] = sim
        self._by_glet[g] = sim
        g.switch()
        return sim

    def step(self, tid: int) -> Optional[Point]:
        """Let ``tid`` perform its pending operation and run to its next point."""
        sim = self.threads[tid]
        if not sim.runnable:
            raise RuntimeError(f"thread {tid} is not runnable")
        if self.trace is not None:
            self.trace.append((tid, sim.pending))
        sim.steps += 1
        self.total_steps += 1
        sim.glet.switch()
        return sim.pending

    def advance(self, tid: int, stop: Optional[StopFn] = None,
                max_steps: int = 1_000_000) -> Optional[Point]:
        """Step ``tid`` until it idles, finishes, or parks on a point matching ``stop``."""
        sim = self.threads[tid]
        for _ in range(max_steps):
            if not sim.runnable:
                return sim.pending
            if stop is not None and stop(sim.pending):
                return sim.pending
            self.step(tid)
        raise RuntimeError(f"thread {tid} did not stop within {max_steps} steps")

    def call(self, tid: int, fn: Callable[[], Any], stop: Optional[StopFn] = None) -> Any:
        """Hand ``fn`` to an idle worker and advance it (to idle or ``stop``)."""
        sim = self.threads[tid]
        if not sim.idle:
            raise RuntimeError(f"thread {tid} is busy")
        sim.pending = None
        sim.result = None
        sim.glet.switch(fn)
        self.advance(tid, stop)
        return sim.result

    def runnable(self) -> list[int]:
        return [t for t, s in self.threads.items() if s.runnable]

    def run_all(self) -> None:
        for tid in sorted(self.threads):
            self.advance(tid)

    def run_random(self, rng: random.Random, max_steps: Optional[int] = None,
                   switch_prob: float = 1.0) -> bool:
        """Interleave runnable threads at random.

        With ``switch_prob`` < 1 the current thread keeps running with
        probability ``1 - switch_prob`` per step.  Returns False if
        ``max_steps`` ran out before every thread finished or idled.
        """
        start = self.total_steps
        geometric = 0.0 < switch_prob < 1.0 and self.trace is None
        current: Optional[int] = None
        while True:
            ready = self.runnable()
            if not ready:
                return True
            done = self.total_steps - start
            if max_steps is not None and done >= max_steps:
                return False
            if geometric:
                # run length ~ Geometric(switch_prob), passed in one go
                current = ready[rng.randrange(len(ready))]
                u = 1.0 - rng.random()
                extra = int(math.log(u) / math.log(1.0 - switch_prob))
                if max_steps is not None:
                    extra = min(extra, max_steps - done - 1)
                self._grant = extra
                self.step(current)
                self._grant = 0
                continue
            if current not in ready or rng.random() < switch_prob:
                current = ready[rng.randrange(len(ready))]
            self.step(current)

    def crash(self) -> None:
        """Kill every unfinished thread where it stands."""
        for sim in self.threads.values():
            if sim.done:
                continue
            try:
                sim.glet.throw(SimulatedCrash())
            except SimulatedCrash:
                pass
            sim.done = True
        self.detach()

    def shutdown(self) -> None:
        """Stop idle workers cleanly; crash anything still mid-operation."""
        for sim in self.threads.values():
            if sim.idle:
                sim.pending = None
                sim.glet.switch(None)
        if any(not s.done for s in self.threads.values()):
            self.crash()
        self.detach()
