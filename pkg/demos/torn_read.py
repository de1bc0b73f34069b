"""Two scripted transactions that would produce a torn read without lock
instrumentation in the hardware path.

Run: python3 demos/torn_read.py
"""
from nvhalt.tmcore import TxConfig
from nvhalt.verify import TORN_READ, run_scenario


def show(title: str, config=None) -> None:
    res = run_scenario(TORN_READ, config)
    print(f"== {title}")
    for tid, step, outcome in res.outcomes:
        print(f"  T{tid} {step:<24} {outcome}")
    verdict = "serializable" if res.serializable.ok else f"NOT serializable ({res.serializable.reason})"
    print(f"  -> {verdict}\n")


if __name__ == "__main__":
    print(TORN_READ)
    show("full instrumentation")
    show("hardware path without lock checks",
         TxConfig(lock_mode="colocated", no_lock_instrumentation=True))
