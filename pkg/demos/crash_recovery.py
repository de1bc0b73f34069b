"""Fill a tree, crash at a random point of a concurrent run, recover and
reattach.

Run: python3 demos/crash_recovery.py [seed]
"""
import sys

from nvhalt.verify import fuzz_once


def main(seed: int) -> None:
    for structure in ("hashmap", "abtree"):
        for eadr in (False, True):
            run = fuzz_once(seed, structure, eadr=eadr)
            mode = "eADR" if eadr else "ADR "
            print(f"{structure:8} {mode} threads={run.threads} read%={run.read_pct:<3} "
                  f"crash@{run.crash_step:<5} committed={run.ops_committed:<4} "
                  f"in-flight={run.inflight}  {'ok' if run.ok else run.problems}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 1)
