"""Fixed-bucket transactional hashmap.

Nodes are four words ``[key, value, full, next]``.  Removal clears the
``full`` flag and leaves the node linked, so a later insert of the same key
reuses it; nodes are never freed.
"""
from __future__ import annotations

from typing import Iterator, Optional

from ..tmcore import ThreadCtx, TransactionalMemory

KEY, VALUE, FULL, NEXT = 0, 1, 2, 3
NODE_WORDS = 4


class TxHashMap:
    def __init__(self, tm: TransactionalMemory, buckets_base: int, nbuckets: int):
        self.tm = tm
        self.base = buckets_base
        self.nbuckets = nbuckets

    @classmethod
    def create(cls, tm: TransactionalMemory, nbuckets: int, root: int = 1) -> "TxHashMap":
        """Allocate the bucket array and record it durably in the root directory."""
        base = tm.allocator.alloc(0, nbuckets)
        for i in range(nbuckets):
            tm.poke(base + i, 0)
        tm.poke(root, base)
        tm.poke(root + 1, nbuckets)
        return cls(tm, base, nbuckets)

    @classmethod
    def attach(cls, tm: TransactionalMemory, root: int = 1) -> "TxHashMap":
        return cls(tm, tm.peek(root), tm.peek(root + 1))

    def _bucket(self, key: int) -> int:
        return self.base + key % self.nbuckets

    @staticmethod
    def _find(tx, head_addr: int, key: int) -> int:
        node = tx.read(head_addr)
        while node:
            if tx.read(node + KEY) == key:
                return node
            node = tx.read(node + NEXT)
        return 0

    # -- operations (one transaction each) ---------------------------------------
    def contains(self, ctx: ThreadCtx, key: int) -> bool:
        def body(tx):
            node = self._find(tx, self._bucket(key), key)
            return bool(node) and tx.read(node + FULL) == 1
        return self.tm.run_transaction(ctx, body)

    def get(self, ctx: ThreadCtx, key: int) -> Optional[int]:
        def body(tx):
            node = self._find(tx, self._bucket(key), key)
            if node and tx.read(node + FULL) == 1:
                return tx.read(node + VALUE)
            return None
        return self.tm.run_transaction(ctx, body)

    def insert(self, ctx: ThreadCtx, key: int, value: int) -> bool:
        """Insert if absent; returns False (and changes nothing) if present."""
        def body(tx):
            head = self._bucket(key)
            node = self._find(tx, head, key)
            if node:
                if tx.read(node + FULL) == 1:
                    return False
                tx.write(node + VALUE, value)
                tx.write(node + FULL, 1)
                return True
            node = tx.alloc(NODE_WORDS)
            tx.write(node + KEY, key)
            tx.write(node + VALUE, value)
            tx.write(node + FULL, 1)
            tx.write(node + NEXT, tx.read(head))
            tx.write(head, node)
            return True
        return self.tm.run_transaction(ctx, body)

    def remove(self, ctx: ThreadCtx, key: int) -> bool:
        def body(tx):
            node = self._find(tx, self._bucket(key), key)
            if node and tx.read(node + FULL) == 1:
                tx.write(node + FULL, 0)
                return True
            return False
        return self.tm.run_transaction(ctx, body)

    # -- quiescent audits -----------------------------------------------------------
    def _nodes(self) -> Iterator[tuple[int, int]]:
        peek = self.tm.peek
        for b in range(self.nbuckets):
            node = peek(self.base + b)
            hops = 0
            while node:
                yield b, node
                node = peek(node + NEXT)
                hops += 1
                if hops > self.tm.word_count:
                    raise RuntimeError(f"cycle in bucket {b}")

    def live_objects(self) -> Iterator[tuple[int, int]]:
        yield self.base, self.nbuckets
        for _, node in self._nodes():
            yield node, NODE_WORDS

    def contents(self) -> dict[int, int]:
        peek = self.tm.peek
        return {peek(n + KEY): peek(n + VALUE) for _, n in self._nodes() if peek(n + FULL) == 1}

    def check(self) -> list[str]:
        problems = []
        peek = self.tm.peek
        seen: dict[int, int] = {}
        try:
            for b, node in self._nodes():
                if not 0 < node <= self.tm.word_count - NODE_WORDS:
                    problems.append(f"node {node} outside heap")
                    break
                key = peek(node + KEY)
                if key % self.nbuckets != b:
                    problems.append(f"key {key} in bucket {b}")
                if key in seen:
                    problems.append(f"key {key} has two nodes")
                seen[key] = node
                if peek(node + FULL) not in (0, 1):
                    problems.append(f"node {node} has flag {peek(node + FULL)}")
        except RuntimeError as exc:
            problems.append(str(exc))
        return problems
