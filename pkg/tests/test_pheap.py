import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvhalt.htmsim import AbortCode, ContractViolation, HtmAbort, Memory
from nvhalt.pheap import (BgFlushPolicy, HeapConfig, LineState, PersistentHeap,
                          PersistentImage, pack_pver, unpack_pver)


def make(words=16, slots=4, **kw):
    return PersistentHeap(HeapConfig(words, slots, **kw))


def persist(heap, addr, old, pver, new, tid=0):
    heap.write_slot(addr, old, pver, new)
    heap.flush_line(heap.vmem_addr_to_pmem(addr), tid)
    heap.fence(tid)


def test_pack_pver_layout():
    assert pack_pver(3, 9) == 0x0003_000000000009
    assert unpack_pver(0x0003_000000000009) == (3, 9)
    with pytest.raises(ValueError):
        pack_pver(1 << 16, 0)
    with pytest.raises(ValueError):
        pack_pver(0, 1 << 48)


@given(st.integers(0, (1 << 16) - 1), st.integers(0, (1 << 48) - 1))
def test_pack_roundtrip(tid, seq):
    assert unpack_pver(pack_pver(tid, seq)) == (tid, seq)


def test_heap_config_invariants():
    with pytest.raises(ValueError):
        HeapConfig(0)
    with pytest.raises(ValueError):
        HeapConfig(8, thread_slots=0)
    with pytest.raises(ValueError):
        HeapConfig(8, thread_slots=1 << 16)
    with pytest.raises(ValueError):
        HeapConfig(8, line_bytes=128)


def test_load_store_and_bounds():
    heap = make()
    assert heap.load(0) == 0
    heap.store(5, 42)
    assert heap.load(5) == 42
    with pytest.raises(ContractViolation):
        heap.load(16)
    with pytest.raises(ContractViolation):
        heap.store(-1, 0)


def test_store_alone_does_not_touch_nvm():
    heap = make()
    heap.store(3, 7)
    assert heap.unpersisted_lines() == []
    assert heap.crash(seed=None).slots[3] == (0, 0, 0)


def test_unflushed_slot_lost_when_crash_excludes_it():
    heap = make()
    heap.write_slot(9, 1, pack_pver(3, 9), 2)
    image = heap.crash(seed=None)
    assert image.slots[9] == (0, 0, 0)


def test_write_flush_fence_persists_slot():
    heap = make()
    persist(heap, 9, 1, pack_pver(3, 9), 2)
    image = heap.crash(seed=None)
    new, old, pver = image.slots[9]
    assert (old, unpack_pver(pver), new) == (1, (3, 9), 2)


def test_eadr_persists_immediately_and_flush_is_noop():
    heap = make(eadr_mode=True)
    heap.write_slot(3, 0, pack_pver(1, 0), 7)
    assert heap.crash(seed=None).slots[3][0] == 7
    heap.flush_line(heap.vmem_addr_to_pmem(3), 1)
    heap.fence(1)
    assert heap.stats["flushes"] == 0 and heap.stats["fences"] == 0


def test_line_state_transitions():
    heap = make()
    line = heap.vmem_addr_to_pmem(2)
    assert heap.line_state(line) is LineState.CLEAN
    heap.flush_line(line)                    # clean: no effect
    assert heap.line_state(line) is LineState.CLEAN
    heap.write_slot(2, 0, 0, 5)
    assert heap.line_state(line) is LineState.DIRTY
    heap.flush_line(line)
    assert heap.line_state(line) is LineState.FLUSH_PENDING
    heap.fence()
    assert heap.line_state(line) is LineState.CLEAN


def test_fence_only_covers_calling_thread():
    heap = make()
    a, b = heap.vmem_addr_to_pmem(1), heap.vmem_addr_to_pmem(2)
    heap.write_slot(1, 0, 0, 11)
    heap.write_slot(2, 0, 0, 22)
    heap.flush_line(a, 1)
    heap.flush_line(b, 2)
    heap.fence(1)
    assert heap.line_state(a) is LineState.CLEAN
    assert heap.line_state(b) is LineState.FLUSH_PENDING


def test_one_fence_persists_two_lines():
    heap = make()
    for addr, v in ((4, 40), (5, 50)):
        heap.write_slot(addr, 0, 0, v)
        heap.flush_line(heap.vmem_addr_to_pmem(addr))
    heap.fence()
    image = heap.crash(seed=None)
    assert image.slots[4][0] == 40 and image.slots[5][0] == 50
    assert heap.unpersisted_lines() == []


def test_fence_without_pending_is_noop():
    heap = make()
    before = heap.snapshot()
    heap.fence()
    assert heap.snapshot() == before


def test_rewrite_after_flush_keeps_line_dirty():
    heap = make()
    line = heap.vmem_addr_to_pmem(1)
    heap.write_slot(1, 0, 0, 1)
    heap.flush_line(line)
    heap.write_slot(1, 1, 0, 2)
    heap.fence()
    # the fence made the flushed content durable but not the later write
    assert heap.snapshot().slots[1][0] == 1
    assert line in heap.unpersisted_lines()


def test_flush_inside_hw_tx_aborts_it():
    mem = Memory()
    heap = PersistentHeap(HeapConfig(8, 4), mem)
    tx = mem.xbegin(1)
    heap.write_slot(0, 0, 0, 1)
    heap.flush_line(heap.vmem_addr_to_pmem(0), 1)
    assert not tx.active and tx.abort.code is AbortCode.EXPLICIT_FLUSH
    with pytest.raises(HtmAbort):
        mem.xend(tx)


def test_background_flush_policies():
    heap = make(bg_flush_policy=BgFlushPolicy.seeded(0.0, seed=1))
    heap.write_slot(1, 0, 0, 9)
    for _ in range(20):
        heap.background_flush_tick()
    assert heap.snapshot().slots[1] == (0, 0, 0)

    heap = make(bg_flush_policy=BgFlushPolicy.seeded(1.0, seed=1))
    heap.write_slot(1, 0, 0, 9)
    heap.write_slot(2, 0, 0, 8)
    assert heap.snapshot().slots[1][0] == 9 and heap.snapshot().slots[2][0] == 8

    heap = make(bg_flush_policy=BgFlushPolicy.flush_all())
    heap.write_slot(3, 0, 0, 7)
    assert heap.snapshot().slots[3][0] == 7
    # states are unchanged by background write-back
    assert heap.line_state(heap.vmem_addr_to_pmem(3)) is LineState.DIRTY


def test_seeded_background_flush_is_reproducible():
    def run():
        heap = make(words=64, bg_flush_policy=BgFlushPolicy.seeded(0.3, seed=5))
        for a in range(64):
            heap.write_slot(a, 0, 0, a + 1)
        return heap.snapshot()
    assert run() == run()


def test_crash_both_outcomes_reachable():
    outcomes = set()
    for seed in range(32):
        heap = make()
        heap.write_slot(6, 0, 0, 66)
        heap.flush_line(heap.vmem_addr_to_pmem(6))   # pending, never fenced
        outcomes.add(heap.crash(seed=seed).slots[6][0])
    assert outcomes == {0, 66}


def test_crash_chooser_forces_inclusion():
    heap = make()
    heap.write_slot(6, 0, 0, 66)
    line = heap.vmem_addr_to_pmem(6)
    assert heap.crash(chooser=lambda ln, st: ln == line).slots[6][0] == 66
    assert heap.crash(chooser=lambda ln, st: False).slots[6][0] == 0


def test_crash_of_clean_heap_equals_cache():
    heap = make()
    persist(heap, 2, 0, 0, 5)
    heap.write_pver(1, 4)
    heap.flush_line(heap.pver_line(1), 0)
    heap.fence()
    image = heap.crash(seed=3)
    assert image.slots[2] == heap.read_slot(2)
    assert image.pver[1] == 4


def test_crash_is_deterministic():
    def run():
        heap = make(words=32)
        for a in range(32):
            heap.write_slot(a, 0, 0, a)
        return heap.crash(seed=11)
    assert run() == run()


def test_image_bytes_roundtrip(tmp_path):
    heap = make(words=10, slots=3)
    persist(heap, 4, 3, pack_pver(2, 7), 9)
    image = heap.snapshot()
    data = image.to_bytes()
    assert len(data) == (1 + 3 + 10) * 64
    assert data[:8] == b"NVHALT01"
    assert PersistentImage.from_bytes(data) == image
    path = tmp_path / "img.bin"
    image.save(path)
    assert PersistentImage.load(path) == image


def test_image_file_written_on_crash(tmp_path):
    path = tmp_path / "crash.img"
    heap = make(image_path=path)
    heap.crash(seed=None)
    assert PersistentImage.load(path).word_count == 16


def test_malformed_image_rejected():
    good = PersistentImage.blank(4, 2).to_bytes()
    with pytest.raises(ValueError):
        PersistentImage.from_bytes(b"XXXXXXXX" + good[8:])
    with pytest.raises(ValueError):
        PersistentImage.from_bytes(good[:-1])
    with pytest.raises(ValueError):
        PersistentImage.from_bytes(b"short")


def test_mapping_is_injective_and_contiguous():
    heap = make(words=1000, slots=8)
    lines = [heap.vmem_addr_to_pmem(a) for a in range(1000)]
    assert len(set(lines)) == 1000
    assert lines[0] == 1 + 8
    assert all(b == a + 1 for a, b in zip(lines, lines[1:]))
    pver_lines = {heap.pver_line(t) for t in range(8)}
    assert not pver_lines & set(lines)
    with pytest.raises(ContractViolation):
        heap.vmem_addr_to_pmem(1000)


def test_owner_check_guards_write_slot():
    heap = make()
    heap.owner_check = lambda addr, tid: tid == 2
    heap.write_slot(1, 0, pack_pver(2, 0), 1)
    with pytest.raises(ContractViolation):
        heap.write_slot(1, 0, pack_pver(3, 0), 1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["w", "f", "F", "b"]), st.integers(0, 7),
                          st.integers(0, 100)), max_size=40),
       st.integers(0, 1000))
def test_crash_lines_are_persisted_or_current(ops, seed):
    """Every line of a crash image is either the last durable content or the
    current cache content, and fenced content is never lost."""
    heap = make(words=8, bg_flush_policy=BgFlushPolicy.seeded(0.2, seed=seed))
    fenced = {}
    pending = {}
    for kind, addr, v in ops:
        line = heap.vmem_addr_to_pmem(addr)
        if kind == "w":
            heap.write_slot(addr, 0, 0, v)
        elif kind == "f":
            heap.flush_line(line)
            pending[addr] = heap.read_slot(addr)
        elif kind == "F":
            heap.fence()
            fenced.update(pending)
            pending.clear()
        else:
            heap.background_flush_tick()
    durable = heap.snapshot()
    image = heap.crash(seed=seed)
    for addr in range(8):
        assert image.slots[addr] in (durable.slots[addr], heap.read_slot(addr))
        if addr in fenced and heap.read_slot(addr) == fenced[addr]:
            assert image.slots[addr] == fenced[addr]
