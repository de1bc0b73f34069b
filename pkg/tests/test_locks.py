import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvhalt.htmsim import ContractViolation, Memory
from nvhalt.locks import GOLDEN, LockTable, is_locked, lock_owner, lock_version, pack_lock


def table(mode="colocated", words=64, size=1 << 20):
    mem = Memory()
    return mem, LockTable(mem, words, mode, size)


def set_lock(mem, lt, lk, owner, sver, hver=0):
    mem.words[lt.word_addr(lk)] = pack_lock(owner, sver)
    mem.words[lt.hver_addr(lk)] = hver


def test_colocated_is_identity():
    _, lt = table()
    assert lt.get_lock(17) == 17
    assert [lt.get_lock(a) for a in range(64)] == list(range(64))
    with pytest.raises(ContractViolation):
        lt.get_lock(64)


@given(st.integers(0, (1 << 30) - 1))
def test_hashed_formula(addr):
    mem = Memory()
    lt = LockTable(mem, 1 << 30, "hashed", 1 << 20)
    expected = ((addr * 0x9E3779B97F4A7C15) & ((1 << 64) - 1)) >> (64 - 20)
    assert lt.get_lock(addr) == expected
    assert lt.get_lock(addr) == lt.get_lock(addr)
    assert 0 <= expected < (1 << 20)


def test_hashed_collisions_near_birthday_bound():
    mem = Memory()
    lt = LockTable(mem, 1 << 40, "hashed", 1 << 20)
    rng = random.Random(1234)
    addrs = rng.sample(range(1 << 40), 100_000)
    n, m = len(addrs), 1 << 20
    collisions = n - len({lt.get_lock(a) for a in addrs})
    # expected number of colliding items: n - m(1 - (1 - 1/m)^n), about 4650
    expected = n - m * (1 - (1 - 1 / m) ** n)
    assert abs(collisions - expected) < 0.1 * expected


def test_invalid_table_size():
    mem = Memory()
    with pytest.raises(ValueError):
        LockTable(mem, 8, "hashed", 1000)
    with pytest.raises(ValueError):
        LockTable(mem, 8, "striped")


def test_pack_helpers():
    w = pack_lock(7, 5)
    assert lock_owner(w) == 7 and lock_version(w) == 5 and is_locked(w)
    assert not is_locked(pack_lock(0, 4))
    assert GOLDEN == 0x9E3779B97F4A7C15


def test_snapshot_and_parity():
    mem, lt = table()
    set_lock(mem, lt, 3, 0, 4, hver=2)
    s = lt.snapshot(3)
    assert (s.owner, s.sver, s.hver, s.locked) == (0, 4, 2, False)
    set_lock(mem, lt, 3, 9, 5, hver=2)
    assert lt.snapshot(3).locked


def test_acquire_release_cycle():
    mem, lt = table()
    set_lock(mem, lt, 3, 0, 4)
    assert lt.try_acquire(3, 4, 7)
    s = lt.snapshot(3)
    assert (s.owner, s.sver) == (7, 5)
    assert not lt.try_acquire(3, 4, 9)         # held
    lt.release(3, 7)
    s = lt.snapshot(3)
    assert (s.owner, s.sver) == (0, 6)
    # an optimistic reader that saw version 4 now fails validation
    assert s.sver != 4
    assert not lt.try_acquire(3, 4, 9)         # version advanced


def test_acquire_contract():
    _, lt = table()
    with pytest.raises(ContractViolation):
        lt.try_acquire(0, 3, 1)
    with pytest.raises(ContractViolation):
        lt.try_acquire(0, 0, 0)


def test_release_by_non_owner():
    mem, lt = table()
    set_lock(mem, lt, 1, 0, 0)
    with pytest.raises(ContractViolation):
        lt.release(1, 7)
    assert lt.try_acquire(1, 0, 7)
    with pytest.raises(ContractViolation):
        lt.release(1, 8)
    assert lt.owned_by(1, 7) and not lt.owned_by(1, 8)


def test_htm_acquire_sp_and_idempotent():
    mem, lt = table()
    set_lock(mem, lt, 5, 0, 4, hver=10)
    tx = mem.xbegin(7)
    assert lt.htm_acquire(tx, 5, 7, sp_mode=True)
    assert tx.writes[lt.word_addr(5)] == pack_lock(7, 5)
    assert tx.writes[lt.hver_addr(5)] == 11
    # second acquisition by the same transaction: no second increment
    assert lt.htm_acquire(tx, 5, 7, sp_mode=True)
    assert tx.writes[lt.word_addr(5)] == pack_lock(7, 5)
    assert tx.writes[lt.hver_addr(5)] == 11
    # nothing is visible before xend
    assert lt.peek(5).sver == 4
    mem.xend(tx)
    s = lt.peek(5)
    assert (s.owner, s.sver, s.hver) == (7, 5, 11)


def test_htm_acquire_weak_leaves_hver():
    mem, lt = table()
    tx = mem.xbegin(2)
    assert lt.htm_acquire(tx, 1, 2, sp_mode=False)
    mem.xend(tx)
    assert lt.peek(1).hver == 0 and lt.peek(1).sver == 1


def test_htm_acquire_locked_by_other():
    mem, lt = table()
    set_lock(mem, lt, 5, 3, 7)
    tx = mem.xbegin(7)
    assert not lt.htm_acquire(tx, 5, 7, sp_mode=True)
    assert not lt.htm_read_ok(tx, 5, 7)
    set_lock(mem, lt, 6, 7, 1)
    assert lt.htm_read_ok(tx, 6, 7)


def test_software_acquire_dooms_hw_reader_of_lock():
    mem, lt = table()
    tx = mem.xbegin(1)
    assert lt.htm_read_ok(tx, 2, 1)
    assert lt.try_acquire(2, 0, 4)
    assert not tx.active


@given(st.lists(st.tuples(st.integers(1, 3), st.booleans()), max_size=60))
def test_parity_and_mutual_exclusion(ops):
    mem, lt = table(words=1)
    for tid, acquire in ops:
        s = lt.snapshot(0)
        before = s.sver
        if acquire:
            ok = lt.try_acquire(0, s.sver & ~1, tid)
            assert ok == (not s.locked)
        elif s.locked and s.owner == tid:
            lt.release(0, tid)
        s = lt.snapshot(0)
        assert s.locked == (s.owner != 0)
        assert s.sver >= before
