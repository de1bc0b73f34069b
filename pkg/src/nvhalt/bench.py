"""Microbenchmark runner: ``python -m nvhalt.bench --help``.

Timed mode runs real threads for ``--seconds`` per trial.  ``--ops N`` switches
to scripted mode: every thread performs exactly N operations under the
deterministic scheduler, so identical flags and seed give identical counters.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import random
import sys
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .containers.abtree import TxABTree
from .containers.hashmap import TxHashMap
from .containers.typeaf import AfMode, TypeAfConfig, run_type_af
from .htmsim import HtmConfig
from .pheap import HeapConfig
from .tmcore import TransactionalMemory, TxConfig, TxStats
from .verify.crashfuzz import crash_fuzz
from .verify.scenarios import run_cross_rounds
from .verify.sched import Scheduler

CSV_COLUMNS = ["structure", "threads", "read_pct", "variant", "lock_mode",
               "ops_per_sec", "hw_commit_pct", "abort_total"]
ZIPF_PRESETS = (0.1, 0.9)


@dataclass
class BenchConfig:
    structure: str = "hashmap"
    keys: int = 4096
    read_pct: int = 90
    distribution: str = "uniform"
    zipf_exponent: float = 0.9
    threads: int = 1
    seconds: float = 2.0
    trials: int = 3
    ops: Optional[int] = None
    variant: str = "weak"
    lock_mode: str = "hashed"
    table_size: int = 1 << 20
    max_hw_attempts: int = 10
    spurious_p: float = 0.0
    hw_read_cap: int = 256
    hw_write_cap: int = 64
    fence_latency_us: float = 20.0
    eadr: bool = False
    seed: int = 0
    objects: int = 100_000
    mode: str = "prealloc"
    crash_test: bool = False
    crash_runs: int = 100
    self_test_rounds: int = 100


class KeySampler:
    """Uniform or Zipfian keys; Zipf rank r (0-based) maps to key r."""

    def __init__(self, keys: int, distribution: str, exponent: float, seed: int):
        self.keys = keys
        self.rng = np.random.default_rng(seed)
        self.zipf = distribution == "zipf"
        if self.zipf:
            weights = 1.0 / np.power(np.arange(1, keys + 1, dtype=np.float64), exponent)
            self.cdf = np.cumsum(weights)
            self.cdf /= self.cdf[-1]
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def _refill(self, n: int = 4096) -> None:
        if self.zipf:
            idx = np.searchsorted(self.cdf, self.rng.random(n), side="right")
            self._buf = np.minimum(idx, self.keys - 1)
        else:
            self._buf = self.rng.integers(0, self.keys, n)
        self._pos = 0

    def next(self) -> int:
        if self._pos >= len(self._buf):
            self._refill()
        k = int(self._buf[self._pos])
        self._pos += 1
        return k


def _build(cfg: BenchConfig, trial: int):
    heap_words = 64 + cfg.keys * 6 if cfg.structure == "hashmap" else 64 + cfg.keys * 40
    heap_words = max(heap_words, 4096) + 2048 * (cfg.threads + 2)
    tm = TransactionalMemory(
        HeapConfig(heap_words, cfg.threads + 2, eadr_mode=cfg.eadr,
                   fence_latency=cfg.fence_latency_us * 1e-6),
        TxConfig(variant=cfg.variant, lock_mode=cfg.lock_mode, table_size=cfg.table_size,
                 max_hw_attempts=cfg.max_hw_attempts),
        HtmConfig(read_capacity=cfg.hw_read_cap, write_capacity=cfg.hw_write_cap,
                  spurious_probability=cfg.spurious_p, rng_seed=cfg.seed + trial))
    setup = tm.register_thread(cfg.threads + 1)
    if cfg.structure == "hashmap":
        cont = TxHashMap.create(tm, cfg.keys)
    else:
        cont = TxABTree.create(tm, setup)
    rng = random.Random(cfg.seed * 7919 + trial)
    for k in rng.sample(range(cfg.keys), cfg.keys // 2):
        cont.insert(setup, k, k + 1)
    # prefill statistics are not part of the measurement
    setup.stats = TxStats()
    return tm, cont


def _worker_ops(cfg: BenchConfig, cont, ctx, sampler: KeySampler, rng: random.Random,
                stop: Optional[threading.Event], limit: Optional[int]) -> int:
    done = 0
    read_pct = cfg.read_pct
    while (limit is None or done < limit) and (stop is None or not stop.is_set()):
        k = sampler.next()
        r = rng.randrange(100)
        if r < read_pct:
            cont.contains(ctx, k)
        elif rng.random() < 0.5:
            cont.insert(ctx, k, done + 1)
        else:
            cont.remove(ctx, k)
        done += 1
    return done


def run_trial(cfg: BenchConfig, trial: int = 0) -> dict:
    tm, cont = _build(cfg, trial)
    ctxs = [tm.register_thread(t + 1) for t in range(cfg.threads)]
    samplers = [KeySampler(cfg.keys, cfg.distribution, cfg.zipf_exponent,
                           cfg.seed * 1_000_003 + trial * 101 + t) for t in range(cfg.threads)]
    rngs = [random.Random(cfg.seed * 31 + trial * 17 + t) for t in range(cfg.threads)]
    counts = [0] * cfg.threads
    if cfg.ops is not None:
        sched = Scheduler(tm.memory)
        for t in range(cfg.threads):
            def fn(t=t):
                counts[t] = _worker_ops(cfg, cont, ctxs[t], samplers[t], rngs[t], None, cfg.ops)
            sched.spawn(t + 1, fn)
        t0 = time.perf_counter()
        sched.run_random(random.Random(cfg.seed + trial), switch_prob=0.2)
        elapsed = time.perf_counter() - t0
        sched.detach()
    else:
        stop = threading.Event()

        def fn(t: int):
            counts[t] = _worker_ops(cfg, cont, ctxs[t], samplers[t], rngs[t], stop, None)
        workers = [threading.Thread(target=fn, args=(t,)) for t in range(cfg.threads)]
        t0 = time.perf_counter()
        for w in workers:
            w.start()
        time.sleep(cfg.seconds)
        stop.set()
        for w in workers:
            w.join()
        elapsed = time.perf_counter() - t0
    stats = TxStats()
    for c in ctxs:
        stats.merge(c.stats)
    ops = sum(counts)
    commits = sum(stats.commits.values())
    tm.allocator.drain()
    return {
        "trial": trial,
        "elapsed": elapsed,
        "operations": ops,
        "ops_per_sec": ops / elapsed if elapsed > 0 else 0.0,
        "hw_commit_pct": 100.0 * stats.commits.get("hw", 0) / commits if commits else 0.0,
        "abort_total": stats.total_aborts,
        "conservation_ok": commits + stats.voluntary == ops
                           and commits + stats.total_aborts == stats.attempts,
        "stats": stats.to_dict(),
        "occupancy": tm.allocator.occupancy(),
        "structure_problems": cont.check(),
    }


def run_bench(cfg: BenchConfig) -> dict:
    """All trials of one configuration plus the mean, as a JSON-able dict."""
    report: dict = {"config": asdict(cfg)}
    if cfg.distribution == "zipf":
        report["zipf_key_mapping"] = "rank r -> key r, inverse-CDF table"
    if cfg.structure == "typeaf":
        res = run_type_af(TypeAfConfig(objects=cfg.objects, threads=cfg.threads,
                                       mode=AfMode(cfg.mode), lock_mode=cfg.lock_mode,
                                       table_size=cfg.table_size, seed=cfg.seed,
                                       max_hw_attempts=cfg.max_hw_attempts))
        report["typeaf"] = res.to_dict()
        report["mean"] = {"ops_per_sec": 0.0, "hw_commit_pct":
                          100.0 * res.stats.commits.get("hw", 0) / max(1, sum(res.stats.commits.values())),
                          "abort_total": res.aborts}
        return report
    if cfg.crash_test:
        fz = crash_fuzz(range(cfg.seed, cfg.seed + cfg.crash_runs), cfg.structure, cfg.eadr)
        report["crash_test"] = fz.to_json()
    trials = [run_trial(cfg, t) for t in range(cfg.trials)]
    report["trials"] = trials
    report["mean"] = {
        "ops_per_sec": float(np.mean([t["ops_per_sec"] for t in trials])),
        "hw_commit_pct": float(np.mean([t["hw_commit_pct"] for t in trials])),
        "abort_total": float(np.mean([t["abort_total"] for t in trials])),
    }
    if cfg.self_test_rounds:
        rounds = run_cross_rounds(cfg.variant, cfg.self_test_rounds)
        report["livelock_self_test"] = {
            "rounds": rounds.rounds,
            "min_commits_per_round": min(rounds.commits_per_round),
            "guarantee_holds": rounds.every_round_commits if cfg.variant == "sp" else None,
        }
    return report


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nvhalt-bench",
                                description="Persistent hybrid TM microbenchmarks")
    p.add_argument("--structure", choices=["hashmap", "abtree", "typeaf"], default="hashmap")
    p.add_argument("--keys", type=int, default=4096)
    p.add_argument("--read-pct", type=_int_list, default=[90],
                   help="comma-separated list from {0,50,90,99}")
    p.add_argument("--distribution", choices=["uniform", "zipf"], default="uniform")
    p.add_argument("--zipf", type=float, default=0.9, choices=ZIPF_PRESETS,
                   help="Zipf exponent preset")
    p.add_argument("--threads", type=_int_list, default=[1], help="comma-separated list")
    p.add_argument("--seconds", type=float, default=2.0)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--ops", type=int, default=None,
                   help="scripted deterministic mode: operations per thread")
    p.add_argument("--variant", choices=["weak", "sp"], default="weak")
    p.add_argument("--lock", dest="lock_mode", choices=["hashed", "colocated"], default="hashed")
    p.add_argument("--table-size", type=int, default=1 << 20)
    p.add_argument("--C", dest="max_hw_attempts", type=int, default=10)
    p.add_argument("--spurious-p", type=float, default=0.0)
    p.add_argument("--hw-read-cap", type=int, default=256)
    p.add_argument("--hw-write-cap", type=int, default=64)
    p.add_argument("--fence-latency-us", type=float, default=20.0)
    p.add_argument("--eadr", action="store_true")
    p.add_argument("--seed", type=int, default=int(os.environ.get("NVHALT_SEED", "0")))
    p.add_argument("--objects", type=int, default=100_000)
    p.add_argument("--mode", choices=[m.value for m in AfMode], default="prealloc")
    p.add_argument("--crash-test", action="store_true")
    p.add_argument("--crash-runs", type=int, default=100)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    return p


def _validate(args, parser) -> None:
    for r in args.read_pct:
        if r not in (0, 50, 90, 99):
            parser.error(f"--read-pct values must be in {{0,50,90,99}}, got {r}")
    if any(t < 1 for t in args.threads):
        parser.error("--threads must be positive")
    if args.keys < 2:
        parser.error("--keys must be at least 2")
    if args.seconds <= 0 or args.trials < 1:
        parser.error("--seconds and --trials must be positive")
    if not 0.0 <= args.spurious_p <= 1.0:
        parser.error("--spurious-p must lie in [0, 1]")
    if args.max_hw_attempts < 0:
        parser.error("--C must be non-negative")
    if args.lock_mode == "hashed" and (args.table_size < 2 or args.table_size & (args.table_size - 1)):
        parser.error("--table-size must be a power of two")
    if args.structure == "typeaf" and args.crash_test:
        parser.error("--crash-test applies to hashmap and abtree only")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(args, parser)
    reports = []
    for threads in args.threads:
        for read_pct in args.read_pct:
            cfg = BenchConfig(
                structure=args.structure, keys=args.keys, read_pct=read_pct,
                distribution=args.distribution, zipf_exponent=args.zipf, threads=threads,
                seconds=args.seconds, trials=args.trials, ops=args.ops, variant=args.variant,
                lock_mode=args.lock_mode, table_size=args.table_size,
                max_hw_attempts=args.max_hw_attempts, spurious_p=args.spurious_p,
                hw_read_cap=args.hw_read_cap, hw_write_cap=args.hw_write_cap,
                fence_latency_us=args.fence_latency_us, eadr=args.eadr, seed=args.seed,
                objects=args.objects, mode=args.mode, crash_test=args.crash_test,
                crash_runs=args.crash_runs)
            reports.append(run_bench(cfg))
    if args.format == "json":
        json.dump(reports if len(reports) > 1 else reports[0], sys.stdout, indent=2, default=str)
        sys.stdout.write("\n")
    else:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(CSV_COLUMNS)
        for rep in reports:
            c = rep["config"]
            m = rep["mean"]
            w.writerow([c["structure"], c["threads"], c["read_pct"], c["variant"], c["lock_mode"],
                        f"{m['ops_per_sec']:.1f}", f"{m['hw_commit_pct']:.2f}",
                        f"{m['abort_total']:.1f}"])
        sys.stdout.write(buf.getvalue())
    return 0


if __name__ == "__main__":
    sys.exit(main())
