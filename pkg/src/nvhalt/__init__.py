"""Persistent hybrid transactional memory on a simulated NVM/HTM substrate."""
from .htmsim import AbortCode, ContractViolation, HtmAbort, HtmConfig, Memory
from .locks import LockTable
from .memmgr import POISON, AllocationError, Allocator
from .pheap import BgFlushPolicy, HeapConfig, PersistentHeap, PersistentImage
from .tmcore import (AbortReason, ConflictWitness, ThreadCtx, TransactionalMemory, TxAbort,
                     TxConfig, TxStats, Variant, VoluntaryAbort, recover_words)

__all__ = [
    "AbortCode", "ContractViolation", "HtmAbort", "HtmConfig", "Memory",
    "LockTable", "POISON", "AllocationError", "Allocator",
    "BgFlushPolicy", "HeapConfig", "PersistentHeap", "PersistentImage",
    "AbortReason", "ConflictWitness", "ThreadCtx", "TransactionalMemory", "TxAbort",
    "TxConfig", "TxStats", "Variant", "VoluntaryAbort", "recover_words",
]
