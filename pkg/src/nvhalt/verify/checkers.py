"""Brute-force correctness checkers over small recorded histories."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Optional, Sequence

from .history import History, TxnInfo

MAX_TXNS = 10
INF = float("inf")


@dataclass
class Verdict:
    ok: bool
    order: Optional[list[int]] = None
    reason: str = ""
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"ok": self.ok, "order": self.order, "reason": self.reason,
                "details": self.details}

    def __bool__(self) -> bool:
        return self.ok


def _end(t: TxnInfo) -> float:
    return t.end_seq if t.end_seq is not None else INF


def _reads_match(t: TxnInfo, state: Mapping[int, int], init: Mapping[int, int]) -> bool:
    for addr, value in t.reads:
        if state.get(addr, init.get(addr, 0)) != value:
            return False
    return True


def _search(txns: Sequence[TxnInfo], init: Mapping[int, int], leaf) -> Optional[list[int]]:
    """DFS over real-time-respecting orders in which every read sees the
    latest write.  ``leaf(order, states)`` accepts or rejects a full order."""
    n = len(txns)
    preds = [frozenset(j for j in range(n) if _end(txns[j]) < txns[i].begin_seq)
             for i in range(n)]
    placed: list[int] = []
    used = [False] * n
    states: list[dict[int, int]] = [{}]

    def dfs() -> bool:
        if len(placed) == n:
            return leaf(placed, states)
        state = states[-1]
        for i in range(n):
            if used[i] or not all(used[j] for j in preds[i]):
                continue
            t = txns[i]
            if not _reads_match(t, state, init):
                continue
            used[i] = True
            placed.append(i)
            nxt = dict(state)
            nxt.update(t.writes)
            states.append(nxt)
            if dfs():
                return True
            states.pop()
            placed.pop()
            used[i] = False
        return False

    if dfs():
        return [txns[i].txn for i in placed]
    return None


def _observers_ok(observers: Sequence[TxnInfo], txns: Sequence[TxnInfo], order: list[int],
                  states: list[dict[int, int]], init: Mapping[int, int]) -> bool:
    """Each aborted/unfinished transaction must have read a consistent
    snapshot: the state after some real-time-admissible prefix of ``order``."""
    for a in observers:
        a_end = _end(a)
        for k in range(len(order) + 1):
            rest = [txns[i] for i in order[k:]]
            if any(_end(t) < a.begin_seq for t in rest):
                continue
            if any(txns[i].begin_seq > a_end for i in order[:k]):
                break
            if _reads_match(a, states[k], init):
                break
        else:
            return False
    return True


def check_serializable(h: History, init: Optional[Mapping[int, int]] = None,
                       include_aborted: bool = True) -> Verdict:
    """SAT iff the committed transactions have a real-time-respecting serial
    order in which every read returns the latest write, and (opacity proxy)
    every aborted or unfinished transaction read a consistent prefix state."""
    init = dict(init or {})
    committed = h.committed()
    if len(committed) > MAX_TXNS:
        raise ValueError(f"{len(committed)} committed transactions exceed the bound {MAX_TXNS}")
    observers = []
    if include_aborted:
        observers = [t for t in h.txns.values() if t.status != "committed" and t.reads]

    def leaf(order, states):
        return _observers_ok(observers, committed, order, states, init)

    order = _search(committed, init, leaf)
    if order is None:
        return Verdict(False, reason="no serial order explains the reads")
    return Verdict(True, order=order)


def check_durable(h: History, recovered: Sequence[int] | Mapping[int, int],
                  init: Optional[Mapping[int, int]] = None) -> Verdict:
    """Recovered state must equal the final state of a serialization of every
    committed transaction plus some subset of the in-flight transactions that
    had reached their linearization point."""
    init = dict(init or {})
    committed = h.committed()
    inflight = [t for t in h.live() if t.lp is not None]
    if len(committed) + len(inflight) > MAX_TXNS:
        raise ValueError("too many transactions for brute-force durability checking")
    addrs = sorted(h.addresses() | set(init))

    def rec(a: int) -> int:
        return recovered[a]

    for r in range(len(inflight) + 1):
        for subset in combinations(inflight, r):
            txns = committed + list(subset)

            def leaf(order, states):
                final = states[-1]
                return all(rec(a) == final.get(a, init.get(a, 0)) for a in addrs)

            order = _search(txns, init, leaf)
            if order is not None:
                return Verdict(True, order=order,
                               details={"included_inflight": [t.txn for t in subset]})
    return Verdict(False, reason="recovered state matches no admissible serialization",
                   details={"recovered": {a: rec(a) for a in addrs}})


def check_progress(stats, max_hw_attempts: int, rounds: Optional[Sequence[int]] = None,
                   strong: bool = False) -> Verdict:
    """O(1)-abortability and, with ``rounds`` (commits per contention round),
    strong progressiveness."""
    problems = []
    if stats.max_hw_attempts > max_hw_attempts:
        problems.append(f"a transaction made {stats.max_hw_attempts} hardware attempts")
    for rec in stats.records:
        if rec.hw_attempts > max_hw_attempts:
            problems.append(f"record with {rec.hw_attempts} hardware attempts")
            break
    if stats.sw_aborts_without_witness:
        problems.append(f"{stats.sw_aborts_without_witness} software aborts without a witness")
    details: dict = {"max_hw_attempts": stats.max_hw_attempts}
    if rounds is not None:
        details["rounds"] = len(rounds)
        details["min_commits_per_round"] = min(rounds) if rounds else 0
        if strong and any(c < 1 for c in rounds):
            problems.append("a contention round ended without any commit")
        if strong and rounds:
            details["guarantee"] = ">=1 commit per round"
    return Verdict(not problems, reason="; ".join(problems), details=details)
