import json

import pytest

from nvhalt.pheap import HeapConfig
from nvhalt.tmcore import TransactionalMemory, TxConfig, TxStats
from nvhalt.verify import (CROSS_ROUND, TORN_READ, UNPERSISTED_DEPENDENCY, History,
                           LpRecorder, Scheduler, check_durable, check_progress,
                           check_serializable, enumerate_crash_points, fuzz_once,
                           linked_list_demo, parse_scenario, run_cross_rounds,
                           run_random_schedule, run_scenario)
from nvhalt.verify.checkers import MAX_TXNS
from nvhalt.verify.scenarios import ScenarioError


def txn(h, txn_id, tid, reads=(), writes=(), commit=True):
    h.begin(tid, txn_id, "sw")
    for a, v in reads:
        h.read(txn_id, a, v)
    for a, v in writes:
        h.write(txn_id, a, v)
    if commit:
        h.lp(txn_id)
        h.commit(txn_id)


# -- checkers ------------------------------------------------------------------

def test_empty_history_is_serializable():
    assert check_serializable(History()).ok


def test_disjoint_transactions_sat():
    h = History()
    h.begin(1, 1, "sw")
    h.begin(2, 2, "sw")
    h.write(1, 0, 5)
    h.write(2, 1, 6)
    h.commit(1)
    h.commit(2)
    v = check_serializable(h)
    assert v.ok and sorted(v.order) == [1, 2]


def test_known_serializable_pair():
    h = History()
    txn(h, 1, 1, writes=[(0, 1)])
    txn(h, 2, 2, reads=[(0, 1)])
    assert check_serializable(h).ok


def test_known_unserializable_pair():
    h = History()
    h.begin(1, 1, "sw")
    h.begin(2, 2, "sw")
    h.read(1, 0, 0)
    h.read(2, 1, 0)
    h.write(1, 1, 1)
    h.write(2, 0, 1)
    h.commit(1)
    h.commit(2)
    v = check_serializable(h)
    assert not v.ok


def test_real_time_order_enforced():
    h = History()
    txn(h, 1, 1, writes=[(0, 1)])
    txn(h, 2, 2, reads=[(0, 0)])       # began after 1 committed, saw stale value
    assert not check_serializable(h).ok


def test_aborted_reader_must_see_consistent_state():
    h = History()
    h.begin(1, 1, "sw")
    h.write(1, 0, 1)
    h.write(1, 1, 1)
    h.commit(1)
    h.begin(2, 2, "hw")
    h.read(2, 0, 1)
    h.read(2, 1, 0)                    # torn view
    h.abort(2, "Explicit")
    assert not check_serializable(h).ok
    assert check_serializable(h, include_aborted=False).ok


def test_bound_exceeded():
    h = History()
    for i in range(MAX_TXNS + 1):
        txn(h, i + 1, 1, writes=[(0, i)])
    with pytest.raises(ValueError):
        check_serializable(h)


def crashed_history(inflight_lp: bool) -> History:
    h = History()
    txn(h, 1, 1, writes=[(0, 1), (1, 1)])
    h.begin(2, 2, "sw")
    h.write(2, 0, 2)
    h.write(2, 1, 2)
    if inflight_lp:
        h.lp(2)
    h.crash()
    return h


def test_check_durable_cases():
    # an in-flight transaction that never linearized can not be included
    assert not check_durable(crashed_history(False), {0: 2, 1: 2}).ok
    h = crashed_history(True)
    assert check_durable(h, {0: 1, 1: 1}).ok         # in-flight excluded
    assert check_durable(h, {0: 2, 1: 2}).ok         # in-flight included
    assert not check_durable(h, {0: 2, 1: 1}).ok     # partial write set
    assert not check_durable(h, {0: 0, 1: 0}).ok     # committed work lost


def test_history_json():
    h = History()
    txn(h, 1, 1, writes=[(0, 1)])
    data = h.to_json()
    assert [e["kind"] for e in data] == ["begin", "write", "lp", "commit"]
    json.dumps(data)


def test_lp_recorder_drops_aborted():
    r = LpRecorder()
    r.begin(1, 1, "sw")
    r.lp(1)
    r.abort(1, "x")
    r.begin(1, 2, "sw")
    r.lp(2)
    r.commit(2)
    assert list(r.lp_at) == [2] and 2 in r.committed


def test_check_progress():
    stats = TxStats()
    stats.max_hw_attempts = 10
    assert check_progress(stats, 10).ok
    assert not check_progress(stats, 9).ok
    stats.sw_aborts_without_witness = 1
    assert not check_progress(stats, 10).ok
    ok = TxStats()
    v = check_progress(ok, 10, rounds=[1, 2, 1], strong=True)
    assert v.ok and v.details["guarantee"] == ">=1 commit per round"
    assert not check_progress(ok, 10, rounds=[1, 0], strong=True).ok


# -- scripted scenarios --------------------------------------------------------

def test_parse_scenario_and_errors():
    steps = parse_scenario("init a1 5\nT1 begin sw\nT1 write a1 0x10  # hex\ncrash seed 3\n")
    assert [s.op for s in steps] == ["init", "begin", "write", "crash"]
    assert steps[2].args == (1, 16) and steps[3].args == (3,)
    for bad in ("T1 read 3", "T1 begin xx", "X1 read a1", "crash now", "T1 fly a1"):
        with pytest.raises(ScenarioError):
            parse_scenario(bad)


def test_single_write_commit_history():
    res = run_scenario("T1 begin sw\nT1 write a0 1\nT1 commit\n")
    assert len(res.history.committed()) == 1 and res.serializable.ok
    assert res.tm.peek(0) == 1


def test_committed_write_survives_crash():
    res = run_scenario("T1 begin sw\nT1 write a0 1\nT1 commit\ncrash\n")
    assert res.recovered[0] == 1 and res.durable.ok


def test_torn_read_scenario():
    full = run_scenario(TORN_READ)
    assert full.serializable.ok
    assert any(o.startswith("abort") for o in full.outcome_of(2))
    broken = run_scenario(TORN_READ, TxConfig(lock_mode="colocated", no_lock_instrumentation=True))
    assert not broken.serializable.ok


def test_unpersisted_dependency_scenario():
    full = run_scenario(UNPERSISTED_DEPENDENCY)
    assert full.durable.ok
    assert "abort:ReadValidation" in full.outcome_of(2)
    broken = run_scenario(UNPERSISTED_DEPENDENCY,
                          TxConfig(lock_mode="colocated", no_persist_locking=True))
    assert not broken.durable.ok
    assert broken.recovered[:3] == [0, 0, 1]


def test_hw_committed_writer_blocks_sw_reader_until_release():
    script = """
T1 begin hw
T1 write a0 1
T1 commit-to release
T2 begin sw
T2 read a0
T1 commit
"""
    res = run_scenario(script)
    assert res.outcome_of(2)[-1] == "abort:ReadValidation"


def test_cross_round_template_runs_once():
    res = run_scenario(CROSS_ROUND.format(v1=1, v2=2), TxConfig(lock_mode="colocated",
                                                                variant="sp"))
    assert "ok" in res.outcome_of(1) + res.outcome_of(2)


def test_cross_rounds_weak_vs_sp():
    weak = run_cross_rounds("weak", rounds=20)
    sp = run_cross_rounds("sp", rounds=20)
    assert weak.all_aborted
    assert sp.every_round_commits


def test_scenario_json():
    res = run_scenario(UNPERSISTED_DEPENDENCY)
    out = json.loads(json.dumps(res.to_json()))
    assert out["crashed"] and out["durable"]["ok"]


def test_scenario_parked_thread_needs_commit():
    with pytest.raises(ScenarioError):
        run_scenario("T1 begin sw\nT1 write a0 1\nT1 commit-to fence\nT1 read a0\n")


# -- scheduler --------------------------------------------------------------------

def test_scheduler_determinism():
    def run(seed):
        res = run_random_schedule(seed, "sp", spurious_p=0.5)
        return [(e.kind, e.tid, e.addr, e.value) for e in res.history.events]
    assert run(17) == run(17)


def test_scheduler_step_and_crash():
    tm = TransactionalMemory(HeapConfig(16, 4), TxConfig(lock_mode="colocated",
                                                        max_hw_attempts=0))
    ctx = tm.register_thread(1)
    sched = Scheduler(tm.memory)
    sched.trace = []
    sched.spawn(1, lambda: tm.run_transaction(ctx, lambda tx: tx.write(0, 7)))
    p = sched.advance(1, lambda p: p.label == "fence")
    assert p.label == "fence" and tm.peek(0) == 7
    sched.crash()
    assert sched.threads[1].done
    assert tm.memory.hook is None
    assert any(pt.label == "slot" for _, pt in sched.trace)


def test_random_schedules_small_batch():
    for seed in range(60):
        for variant in ("weak", "sp"):
            r = run_random_schedule(seed, variant, spurious_p=0.5 if seed % 2 else 0.0)
            assert r.completed and r.verdict.ok, (seed, variant, r.verdict.reason)


def test_negative_config_is_caught_by_random_schedules():
    found = 0
    for seed in range(600):
        r = run_random_schedule(seed, "weak", max_hw_attempts=3, no_lock_instrumentation=True)
        found += not r.verdict.ok
        if found:
            break
    assert found


# -- crash tooling ------------------------------------------------------------------

@pytest.mark.parametrize("path", ["sw", "hw"])
@pytest.mark.parametrize("eadr", [False, True])
def test_enumeration(path, eadr):
    rep = enumerate_crash_points(path, eadr)
    assert rep.ok
    outcomes = set().union(*(p.outcomes for p in rep.points))
    assert outcomes == {"pre", "post"}
    assert rep.points[-1].outcomes == {"post"}
    assert rep.points[0].outcomes == {"pre"}


def test_linked_list_demo():
    assert linked_list_demo(use_tm=False) is False
    assert linked_list_demo(use_tm=True) is True


@pytest.mark.parametrize("structure", ["hashmap", "abtree"])
def test_fuzz_once_small(structure):
    for seed in range(10):
        run = fuzz_once(seed, structure)
        assert run.ok, run.problems


def test_fuzz_detects_pver_before_slots(monkeypatch):
    """A commit that publishes its version number before the data slots must
    be caught by the enumeration."""
    from nvhalt import tmcore

    def broken(self, entries, held):
        tm, heap, tid, ctx = self.tm, self.tm.heap, self.tid, self.ctx
        pver = (tid << tmcore.SEQ_BITS) | ctx.pver_num
        ctx.pver_num += 1
        heap.write_pver(tid, ctx.pver_num)
        heap.flush_line(heap.pver_line(tid), tid)
        heap.fence(tid)
        for addr, old, new in entries:
            if new is None:
                new = heap.load(addr)
            else:
                old = heap.load(addr)
            heap.write_slot(addr, old, pver, new)
            heap.flush_line(heap.vmem_addr_to_pmem(addr), tid)
            heap.store(addr, new)
        heap.fence(tid)
        for lk in held:
            tm.locks.release(lk, tid)
    monkeypatch.setattr(tmcore._TxBase, "_persist_and_release", broken)
    assert not enumerate_crash_points("sw").ok


@pytest.mark.parametrize("seed,structure,eadr", [(211, "hashmap", False), (171, "hashmap", True),
                                                 (324, "abtree", False)])
def test_fuzz_read_only_lp_inside_validation(seed, structure, eadr):
    # a writer committing midway through a reader's validation loop once
    # made the recorded order disagree with the values the reader saw
    run = fuzz_once(seed, structure, eadr=eadr)
    assert run.ok, run.problems
