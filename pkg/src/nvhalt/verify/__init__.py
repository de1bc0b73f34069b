from .checkers import Verdict, check_durable, check_progress, check_serializable
from .crashfuzz import crash_fuzz, enumerate_crash_points, fuzz_once, linked_list_demo
from .history import History, LpRecorder
from .scenarios import (CROSS_ROUND, TORN_READ, UNPERSISTED_DEPENDENCY, parse_scenario,
                        run_cross_rounds, run_random_schedule, run_scenario)
from .sched import Scheduler, SimulatedCrash

__all__ = [
    "Verdict", "check_durable", "check_progress", "check_serializable",
    "crash_fuzz", "enumerate_crash_points", "fuzz_once", "linked_list_demo",
    "History", "LpRecorder",
    "CROSS_ROUND", "TORN_READ", "UNPERSISTED_DEPENDENCY", "parse_scenario",
    "run_cross_rounds", "run_random_schedule", "run_scenario",
    "Scheduler", "SimulatedCrash",
]
