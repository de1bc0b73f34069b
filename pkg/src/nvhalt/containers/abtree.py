"""Transactional (a,b)-tree, a=4, b=16, with eager top-down rebalancing.

Node layout (34 words, allocated in the 64-word class)::

    [leaf flag, count, keys[16], ptrs[16]]

A leaf's count is its number of keys and ``ptrs`` hold values.  An internal
node's count is its number of children; it has ``count - 1`` separator keys
and child ``i`` covers keys in ``[keys[i-1], keys[i])``.  Inserts split full
nodes on the way down and removes top up minimal ones, so every operation is
a single root-to-leaf pass inside one transaction.
"""
from __future__ import annotations

from typing import Iterator, Optional

from ..tmcore import ThreadCtx, TransactionalMemory

A, B = 4, 16
LEAF, CNT, KEYS, PTRS = 0, 1, 2, 2 + B
NODE_WORDS = 2 + 2 * B


def _is_leaf(tx, n: int) -> bool:
    return tx.read(n + LEAF) == 1


def _child_index(tx, n: int, cnt: int, key: int) -> int:
    lo, hi = 0, cnt - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if key < tx.read(n + KEYS + mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def _lower_bound(tx, n: int, cnt: int, key: int) -> int:
    lo, hi = 0, cnt
    while lo < hi:
        mid = (lo + hi) // 2
        if tx.read(n + KEYS + mid) < key:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _move(tx, src: int, dst: int, count: int) -> None:
    """Copy ``count`` words; overlapping ranges are handled like memmove."""
    if dst > src:
        rng = range(count - 1, -1, -1)
    else:
        rng = range(count)
    for i in rng:
        tx.write(dst + i, tx.read(src + i))


def _new_node(tx, leaf: bool, cnt: int) -> int:
    n = tx.alloc(NODE_WORDS)
    tx.write(n + LEAF, 1 if leaf else 0)
    tx.write(n + CNT, cnt)
    return n


class TxABTree:
    def __init__(self, tm: TransactionalMemory, root_word: int):
        self.tm = tm
        self.root_word = root_word

    @classmethod
    def create(cls, tm: TransactionalMemory, ctx: ThreadCtx, root: int = 3) -> "TxABTree":
        tree = cls(tm, root)

        def body(tx):
            tx.write(root, _new_node(tx, True, 0))
        tm.run_transaction(ctx, body)
        return tree

    @classmethod
    def attach(cls, tm: TransactionalMemory, root: int = 3) -> "TxABTree":
        return cls(tm, root)

    # -- structural helpers (inside a transaction) ---------------------------------
    @staticmethod
    def _split_child(tx, p: int, i: int, c: int) -> None:
        leaf = _is_leaf(tx, c)
        pcnt = tx.read(p + CNT)
        if leaf:
            half = B // 2
            r = _new_node(tx, True, B - half)
            _move(tx, c + KEYS + half, r + KEYS, B - half)
            _move(tx, c + PTRS + half, r + PTRS, B - half)
            sep = tx.read(r + KEYS)
            tx.write(c + CNT, half)
        else:
            half = B // 2                      # children kept on the left
            r = _new_node(tx, False, B - half)
            sep = tx.read(c + KEYS + half - 1)
            _move(tx, c + KEYS + half, r + KEYS, B - half - 1)
            _move(tx, c + PTRS + half, r + PTRS, B - half)
            tx.write(c + CNT, half)
        # open slot i in p's keys and i+1 in its children
        _move(tx, p + KEYS + i, p + KEYS + i + 1, pcnt - 1 - i)
        _move(tx, p + PTRS + i + 1, p + PTRS + i + 2, pcnt - 1 - i)
        tx.write(p + KEYS + i, sep)
        tx.write(p + PTRS + i + 1, r)
        tx.write(p + CNT, pcnt + 1)

    @staticmethod
    def _fix_child(tx, p: int, i: int) -> tuple[int, int]:
        """Give child ``i`` of ``p`` more than A entries; returns (node, index)."""
        pcnt = tx.read(p + CNT)
        c = tx.read(p + PTRS + i)
        leaf = _is_leaf(tx, c)
        ccnt = tx.read(c + CNT)
        if i > 0:
            s = tx.read(p + PTRS + i - 1)
            scnt = tx.read(s + CNT)
            if scnt > A:
                # borrow the left sibling's last entry
                if leaf:
                    _move(tx, c + KEYS, c + KEYS + 1, ccnt)
                    _move(tx, c + PTRS, c + PTRS + 1, ccnt)
                    tx.write(c + KEYS, tx.read(s + KEYS + scnt - 1))
                    tx.write(c + PTRS, tx.read(s + PTRS + scnt - 1))
                    tx.write(p + KEYS + i - 1, tx.read(c + KEYS))
                else:
                    _move(tx, c + KEYS, c + KEYS + 1, ccnt - 1)
                    _move(tx, c + PTRS, c + PTRS + 1, ccnt)
                    tx.write(c + KEYS, tx.read(p + KEYS + i - 1))
                    tx.write(c + PTRS, tx.read(s + PTRS + scnt - 1))
                    tx.write(p + KEYS + i - 1, tx.read(s + KEYS + scnt - 2))
                tx.write(s + CNT, scnt - 1)
                tx.write(c + CNT, ccnt + 1)
                return c, i
            left, right, j = s, c, i - 1
        else:
            s = tx.read(p + PTRS + i + 1)
            scnt = tx.read(s + CNT)
            if scnt > A:
                # borrow the right sibling's first entry
                if leaf:
                    tx.write(c + KEYS + ccnt, tx.read(s + KEYS))
                    tx.write(c + PTRS + ccnt, tx.read(s + PTRS))
                    _move(tx, s + KEYS + 1, s + KEYS, scnt - 1)
                    _move(tx, s + PTRS + 1, s + PTRS, scnt - 1)
                    tx.write(p + KEYS + i, tx.read(s + KEYS))
                else:
                    tx.write(c + KEYS + ccnt - 1, tx.read(p + KEYS + i))
                    tx.write(c + PTRS + ccnt, tx.read(s + PTRS))
                    tx.write(p + KEYS + i, tx.read(s + KEYS))
                    _move(tx, s + KEYS + 1, s + KEYS, scnt - 2)
                    _move(tx, s + PTRS + 1, s + PTRS, scnt - 1)
                tx.write(s + CNT, scnt - 1)
                tx.write(c + CNT, ccnt + 1)
                return c, i
            left, right, j = c, s, i
        # merge ``right`` into ``left``; both are minimal so the result fits
        lcnt = tx.read(left + CNT)
        rcnt = tx.read(right + CNT)
        if leaf:
            _move(tx, right + KEYS, left + KEYS + lcnt, rcnt)
            _move(tx, right + PTRS, left + PTRS + lcnt, rcnt)
        else:
            tx.write(left + KEYS + lcnt - 1, tx.read(p + KEYS + j))
            _move(tx, right + KEYS, left + KEYS + lcnt, rcnt - 1)
            _move(tx, right + PTRS, left + PTRS + lcnt, rcnt)
        tx.write(left + CNT, lcnt + rcnt)
        _move(tx, p + KEYS + j + 1, p + KEYS + j, pcnt - 2 - j)
        _move(tx, p + PTRS + j + 2, p + PTRS + j + 1, pcnt - 2 - j)
        tx.write(p + CNT, pcnt - 1)
        tx.free(right)
        return left, j

    # -- operations ------------------------------------------------------------------
    def contains(self, ctx: ThreadCtx, key: int) -> bool:
        return self.get(ctx, key) is not None

    def get(self, ctx: ThreadCtx, key: int) -> Optional[int]:
        def body(tx):
            n = tx.read(self.root_word)
            while True:
                cnt = tx.read(n + CNT)
                if _is_leaf(tx, n):
                    pos = _lower_bound(tx, n, cnt, key)
                    if pos < cnt and tx.read(n + KEYS + pos) == key:
                        return tx.read(n + PTRS + pos)
                    return None
                n = tx.read(n + PTRS + _child_index(tx, n, cnt, key))
        return self.tm.run_transaction(ctx, body)

    def insert(self, ctx: ThreadCtx, key: int, value: int) -> bool:
        """Insert if absent; False if the key is already present."""
        def body(tx):
            root = tx.read(self.root_word)
            if tx.read(root + CNT) == B:
                new_root = _new_node(tx, False, 1)
                tx.write(new_root + PTRS, root)
                self._split_child(tx, new_root, 0, root)
                tx.write(self.root_word, new_root)
                root = new_root
            n = root
            while not _is_leaf(tx, n):
                cnt = tx.read(n + CNT)
                i = _child_index(tx, n, cnt, key)
                c = tx.read(n + PTRS + i)
                if tx.read(c + CNT) == B:
                    self._split_child(tx, n, i, c)
                    if key >= tx.read(n + KEYS + i):
                        i += 1
                    c = tx.read(n + PTRS + i)
                n = c
            cnt = tx.read(n + CNT)
            pos = _lower_bound(tx, n, cnt, key)
            if pos < cnt and tx.read(n + KEYS + pos) == key:
                return False
            _move(tx, n + KEYS + pos, n + KEYS + pos + 1, cnt - pos)
            _move(tx, n + PTRS + pos, n + PTRS + pos + 1, cnt - pos)
            tx.write(n + KEYS + pos, key)
            tx.write(n + PTRS + pos, value)
            tx.write(n + CNT, cnt + 1)
            return True
        return self.tm.run_transaction(ctx, body)

    def remove(self, ctx: ThreadCtx, key: int) -> bool:
        def body(tx):
            n = tx.read(self.root_word)
            while not _is_leaf(tx, n):
                cnt = tx.read(n + CNT)
                i = _child_index(tx, n, cnt, key)
                c = tx.read(n + PTRS + i)
                if tx.read(c + CNT) <= A:
                    c, i = self._fix_child(tx, n, i)
                    if n == tx.read(self.root_word) and tx.read(n + CNT) == 1:
                        tx.write(self.root_word, c)
                        tx.free(n)
                n = c
            cnt = tx.read(n + CNT)
            pos = _lower_bound(tx, n, cnt, key)
            if pos == cnt or tx.read(n + KEYS + pos) != key:
                return False
            _move(tx, n + KEYS + pos + 1, n + KEYS + pos, cnt - pos - 1)
            _move(tx, n + PTRS + pos + 1, n + PTRS + pos, cnt - pos - 1)
            tx.write(n + CNT, cnt - 1)
            return True
        return self.tm.run_transaction(ctx, body)

    # -- quiescent audits -----------------------------------------------------------------
    def _walk(self) -> Iterator[tuple[int, int]]:
        """(node, depth) in pre-order."""
        peek = self.tm.peek
        stack = [(peek(self.root_word), 0)]
        budget = self.tm.word_count
        while stack:
            n, d = stack.pop()
            budget -= 1
            if budget < 0:
                raise RuntimeError("tree walk does not terminate")
            yield n, d
            if peek(n + LEAF) != 1:
                cnt = peek(n + CNT)
                for i in range(min(cnt, B) - 1, -1, -1):
                    stack.append((peek(n + PTRS + i), d + 1))

    def live_objects(self) -> Iterator[tuple[int, int]]:
        for n, _ in self._walk():
            yield n, NODE_WORDS

    def contents(self) -> dict[int, int]:
        peek = self.tm.peek
        out = {}
        for n, _ in self._walk():
            if peek(n + LEAF) == 1:
                for i in range(peek(n + CNT)):
                    out[peek(n + KEYS + i)] = peek(n + PTRS + i)
        return out

    def check(self) -> list[str]:
        peek = self.tm.peek
        problems: list[str] = []
        leaf_depths: set[int] = set()
        seen: set[int] = set()
        root = peek(self.root_word)

        def visit(n: int, depth: int, lo, hi) -> None:
            if n in seen:
                problems.append(f"node {n} reachable twice")
                return
            seen.add(n)
            if not 0 < n <= self.tm.word_count - NODE_WORDS:
                problems.append(f"node {n} outside heap")
                return
            leaf = peek(n + LEAF)
            cnt = peek(n + CNT)
            if leaf not in (0, 1):
                problems.append(f"node {n} has leaf flag {leaf}")
                return
            is_root = n == root
            if leaf:
                lo_cnt = 0 if is_root else A
                if not lo_cnt <= cnt <= B:
                    problems.append(f"leaf {n} holds {cnt} keys")
                    return
                keys = [peek(n + KEYS + i) for i in range(cnt)]
                leaf_depths.add(depth)
            else:
                lo_cnt = 2 if is_root else A
                if not lo_cnt <= cnt <= B:
                    problems.append(f"internal {n} has {cnt} children")
                    return
                keys = [peek(n + KEYS + i) for i in range(cnt - 1)]
            if any(a >= b for a, b in zip(keys, keys[1:])):
                problems.append(f"node {n} keys unsorted")
            if keys and ((lo is not None and keys[0] < lo) or (hi is not None and keys[-1] >= hi)):
                problems.append(f"node {n} keys outside [{lo}, {hi})")
            if not leaf:
                bounds = [lo] + keys + [hi]
                for i in range(cnt):
                    visit(peek(n + PTRS + i), depth + 1, bounds[i], bounds[i + 1])

        visit(root, 0, None, None)
        if len(leaf_depths) > 1:
            problems.append(f"leaves at depths {sorted(leaf_depths)}")
        return problems
