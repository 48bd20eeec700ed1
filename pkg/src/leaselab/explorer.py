"""Exhaustive schedule exploration over canonical world snapshots.

Breadth-first search over protocol states. A transition is one queued
event dispatched under one fully resolved choice vector; the branch
points are (a) which same-timestamp event runs next and (b) every
`choose` outcome inside the handler, enumerated by re-running the event
with a `CountingChooser` prefix per sibling. States are deduplicated by
the 128-bit canonical digest, which is why the engine renumbers queue
sequence order inside snapshots: interleavings that converge are
recognized and the frontier stays tractable.

Safety is re-checked after every transition, so the first counterexample
found is one of minimal transition depth (BFS layer order). Scenario
final checks run at leaf states: those with no event left inside the
tick horizon. A counterexample is the list of (event key, choice vector)
steps from the initial state and can be replayed deterministically with
tracing on.
"""

from __future__ import annotations

from collections import deque

from . import canon
from .election import Candidate
from .engine import CountingChooser, ScriptChooser
from .runtime import AppInstance
from .scenario import build_world, eval_checks

SAFE = "safe"
VIOLATION = "violation"
BOUND_EXHAUSTED = "bound_exhausted"


class ExploreResult:
    def __init__(self, outcome, states, transitions, max_depth,
                 violation=None, path=None, state_digests=None):
        self.outcome = outcome
        self.states = states
        self.transitions = transitions
        self.max_depth = max_depth
        self.violation = violation  # dict when outcome == VIOLATION
        self.path = path            # ((key, picks), ...) from the root
        # every canonical digest visited, for cross-checking the frontier
        # logic against an independent enumeration
        self.state_digests = state_digests

    def stats(self):
        return {
            "outcome": self.outcome,
            "states": self.states,
            "transitions": self.transitions,
            "max_depth": self.max_depth,
        }

    def __repr__(self):
        return (f"ExploreResult({self.outcome}, states={self.states}, "
                f"transitions={self.transitions}, depth={self.max_depth})")


def single_leader_violation(world):
    """More than one candidate on one device did work this tick."""
    workers = {}
    for uid, a in world.actors.items():
        if (isinstance(a, Candidate) and a.phase == "leading"
                and a.work_tick == world.now):
            workers.setdefault(a.cid, []).append(uid)
    for cid, uids in sorted(workers.items()):
        if len(uids) > 1:
            return (f"device {cid}: {sorted(uids)} all did work "
                    f"at tick {world.now}")
    return None


def lease_exclusivity_violation(world, epsilon):
    """Two live instances could both still read inside their lease."""
    holders = {}
    for uid, a in world.actors.items():
        if (isinstance(a, AppInstance) and a.status != "terminated"
                and a.view_expiry is not None
                and a.view_expiry > world.now - epsilon):
            holders.setdefault(a.lease_id, []).append(uid)
    for lid, uids in sorted(holders.items()):
        if len(uids) > 1:
            return f"lease {lid}: {sorted(uids)} all locally valid"
    return None


def standard_state_check(world):
    detail = single_leader_violation(world)
    if detail is not None:
        return ("single_leader", detail)
    detail = lease_exclusivity_violation(
        world, world.params.get("epsilon", 0))
    if detail is not None:
        return ("lease_exclusivity", detail)
    return None


def explore(make_world, depth=100000, horizon=None, final_checks=None,
            state_check=standard_state_check):
    """Exhaustively explore; returns an ExploreResult.

    `make_world` is a zero-argument callable producing a fresh world in
    exploration mode. `depth` bounds the number of transitions along any
    schedule prefix; `horizon` bounds the virtual tick of any event.
    """
    depth_bound = depth
    world = make_world()
    root = world.snapshot()
    root_dig = canon.digest(root)
    parents = {root_dig: None}
    seen = {root_dig}
    frontier = deque([(root, root_dig, 0)])
    states = 1
    transitions = 0
    max_depth = 0
    bound_hit = False

    def result_violation(kind, detail, dig, at_depth):
        path = _rebuild_path(parents, dig)
        violation = {
            "kind": kind,
            "detail": detail,
            "tick": world.now,
            "depth": at_depth,
            "digest": dig,
        }
        return ExploreResult(VIOLATION, states, transitions,
                             max(max_depth, at_depth), violation, path,
                             state_digests=seen)

    # the initial state itself could already be in violation
    world.restore(root)
    bad = state_check(world)
    if bad is not None:
        return result_violation(bad[0], bad[1], root_dig, 0)

    while frontier:
        snap, dig, d = frontier.popleft()
        world.restore(snap)
        events = [
            e for e in world.enabled_events()
            if horizon is None or e[0] <= horizon
        ]
        if not events:
            # leaf: quiescent, or every remaining event is past horizon
            failures = [r for r in eval_checks(world, final_checks)
                        if not r["ok"]]
            if failures:
                f = failures[0]
                return result_violation(
                    "final_check:" + f["kind"], f["detail"], dig, d)
            continue
        if d >= depth_bound:
            bound_hit = True
            continue
        for entry in events:
            key = (entry[0], entry[1])
            todo = [()]
            while todo:
                prefix = todo.pop()
                world.restore(snap)
                chooser = CountingChooser(prefix)
                world.step_specific(key, chooser)
                transitions += 1
                picks = tuple(chooser.picks)
                counts = tuple(chooser.counts)
                child = world.snapshot()
                child_dig = canon.digest(child)
                is_new = child_dig not in seen
                if is_new:
                    seen.add(child_dig)
                    states += 1
                    parents[child_dig] = (dig, key, picks)
                bad = state_check(world)
                if bad is not None:
                    return result_violation(bad[0], bad[1], child_dig, d + 1)
                if is_new:
                    max_depth = max(max_depth, d + 1)
                    frontier.append((child, child_dig, d + 1))
                for i in range(len(prefix), len(picks)):
                    for alt in range(1, counts[i]):
                        todo.append(picks[:i] + (alt,))

    outcome = BOUND_EXHAUSTED if bound_hit else SAFE
    return ExploreResult(outcome, states, transitions, max_depth,
                         state_digests=seen)


def _rebuild_path(parents, dig):
    steps = []
    cur = parents.get(dig)
    while cur is not None:
        parent_dig, key, picks = cur
        steps.append((key, picks))
        cur = parents[parent_dig]
    steps.reverse()
    return tuple(steps)


def replay_path(world, path):
    """Re-execute a recorded counterexample on a fresh world.

    The world should be freshly built in exploration mode (typically
    with tracing and digests on). Event keys in the path refer to the
    canonical queue numbering, so the queue is renormalized through a
    snapshot/restore round-trip before each step.
    """
    world.restore(world.snapshot())
    for key, picks in path:
        world.step_specific(key, ScriptChooser(picks))
        world.restore(world.snapshot())
    return world


def explore_scenario(doc, depth=None, horizon=None, final_checks=None):
    cfg = doc.get("explore", {})
    if depth is None:
        depth = cfg.get("depth", 100000)
    if horizon is None:
        horizon = cfg.get("horizon")
    if final_checks is None:
        final_checks = cfg.get("final_checks")
    return explore(
        lambda: build_world(doc, explore=True, monitors=False),
        depth=depth, horizon=horizon, final_checks=final_checks)


def replay_counterexample(doc, path):
    """Build a traced world and replay the counterexample on it."""
    world = build_world(doc, explore=True, monitors=False,
                        trace=True, digests=True)
    return replay_path(world, path)
