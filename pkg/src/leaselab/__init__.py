"""Deterministic laboratory for lease protocols under adversarial schedules.

The package simulates a small distributed system on a discrete-event
engine: a trusted lease service backed by a rollback-protected replicated
store, counter-arbitrated local leader election, application instances
gated on lease views, and a scripted adversary that delays, drops,
replays, clones, pauses, and rolls back state.  Every run is
deterministic given a seed; an exhaustive explorer enumerates all
schedules of a scenario instead of sampling them.
"""

from .adversary import ScriptedAdversary
from .election import Candidate, spawn_candidate
from .engine import (
    CounterDevice,
    CounterValue,
    CountingChooser,
    RandomChooser,
    ScriptChooser,
    TrustedClock,
    World,
)
from .errors import (
    ClockDisciplineError,
    ForbiddenAction,
    IntegrityViolation,
    LeaselabError,
    RollbackDetected,
    ScenarioError,
    SchedulingInPast,
)
from .explorer import (
    BOUND_EXHAUSTED,
    SAFE,
    VIOLATION,
    ExploreResult,
    explore,
    explore_scenario,
    replay_counterexample,
    replay_path,
)
from .lease import LeaseServer, provision_server
from .linearize import check_history, is_linearizable
from .monitors import all_violations, standard_monitors
from .runtime import AppInstance, Client, spawn_app, spawn_client, spawn_clone
from .scenario import (
    DEFAULT_PARAMS,
    build_world,
    eval_checks,
    make_election_explore,
    make_micro_election,
    parse_scenario,
    run_simulation,
    scenarios_dir,
    validate_scenario,
)
from .sealing import open_sealed, seal
from .store import Replica, provision_store, spawn_replica_process

__all__ = [
    "AppInstance",
    "BOUND_EXHAUSTED",
    "Candidate",
    "Client",
    "ClockDisciplineError",
    "CounterDevice",
    "CounterValue",
    "CountingChooser",
    "DEFAULT_PARAMS",
    "ExploreResult",
    "ForbiddenAction",
    "IntegrityViolation",
    "LeaselabError",
    "LeaseServer",
    "RandomChooser",
    "Replica",
    "RollbackDetected",
    "SAFE",
    "ScenarioError",
    "SchedulingInPast",
    "ScriptChooser",
    "ScriptedAdversary",
    "TrustedClock",
    "VIOLATION",
    "World",
    "all_violations",
    "build_world",
    "check_history",
    "eval_checks",
    "explore",
    "explore_scenario",
    "is_linearizable",
    "make_election_explore",
    "make_micro_election",
    "open_sealed",
    "parse_scenario",
    "provision_server",
    "provision_store",
    "replay_counterexample",
    "replay_path",
    "run_simulation",
    "scenarios_dir",
    "seal",
    "spawn_app",
    "spawn_candidate",
    "spawn_client",
    "spawn_clone",
    "spawn_replica_process",
    "standard_monitors",
    "validate_scenario",
]

__version__ = "0.1.0"
