"""Run-time invariant monitors.

Each monitor watches a run through two hooks: `after_event` fires once
per processed engine event, `on_emit` receives protocol-level
observations. A violation is recorded once per invariant with the first
tick at which it was seen; scenario runs turn these into the report's
per-invariant table.
"""

from __future__ import annotations

from .election import Candidate
from .engine import counter_less
from .runtime import AppInstance
from .store import ABSENT


class Monitor:
    name = "monitor"

    def __init__(self):
        self.violations = []  # (invariant, first_tick, detail)
        self._seen = set()

    def flag(self, invariant, tick, detail):
        if invariant not in self._seen:
            self._seen.add(invariant)
            self.violations.append((invariant, tick, detail))

    def after_event(self, world, tick, uid, desc):
        pass

    def on_emit(self, world, kind, fields):
        pass


class ElectionSafetyMonitor(Monitor):
    """At most one candidate per counter device does work in any tick."""

    name = "single_leader"

    def after_event(self, world, tick, uid, desc):
        workers = {}
        for a in world.actors.values():
            if (isinstance(a, Candidate) and a.phase == "leading"
                    and a.work_tick == tick):
                workers.setdefault(a.cid, []).append(a.uid)
        for cid, uids in workers.items():
            if len(uids) > 1:
                self.flag("single_leader", tick,
                          f"device {cid}: {sorted(uids)} all worked")


class LeaseMonitor(Monitor):
    """R3 exclusivity, the R4 externalization gate, and the rule that a
    loser learns of its loss only after its own term is over."""

    name = "lease"

    def __init__(self, epsilon):
        super().__init__()
        self.epsilon = epsilon
        self.ext_since_grant = {}

    def after_event(self, world, tick, uid, desc):
        holders = {}
        for a in world.actors.values():
            if not isinstance(a, AppInstance) or a.status == "terminated":
                continue
            if a.view_expiry is None:
                continue
            # the holder's own clock could still read below its expiry
            if a.view_expiry > tick - self.epsilon:
                holders.setdefault(a.lease_id, []).append(a.uid)
        for lid, uids in holders.items():
            if len(uids) > 1:
                self.flag("lease_exclusivity", tick,
                          f"lease {lid}: {sorted(uids)} all locally valid")

    def on_emit(self, world, kind, fields):
        if kind == "externalize":
            if not (fields["tau"] < fields["expiry"]):
                self.flag("externalize_gate", world.now,
                          f"{fields['uid']} externalized at trusted "
                          f"{fields['tau']} with expiry {fields['expiry']}")
            self.ext_since_grant[fields["uid"]] = (
                self.ext_since_grant.get(fields["uid"], 0) + 1)
        elif kind == "lease_view":
            self.ext_since_grant[fields["uid"]] = 0
        elif kind == "instance_rejected":
            uid = fields["uid"]
            a = world.actors.get(uid)
            if (a is not None and a.view_expiry is not None
                    and a.last_read is not None
                    and a.last_read < a.view_expiry
                    and self.ext_since_grant.get(uid, 0) > 0):
                self.flag("externalize_then_lost", world.now,
                          f"{uid} externalized in a term it then lost")


class CounterMonitor(Monitor):
    """R5 nondecrease, single winner per count, one election write per
    candidate."""

    name = "counter"

    def __init__(self):
        super().__init__()
        self.cursor = 0
        self.last_value = {}
        self.winners = {}
        self.elect_writes = {}

    def after_event(self, world, tick, uid, desc):
        ops = world.counter_ops
        while self.cursor < len(ops):
            rec = ops[self.cursor]
            self.cursor += 1
            prev = self.last_value.get(rec.cid)
            if prev is not None and counter_less(rec.result, prev):
                self.flag("counter_nondecrease", tick,
                          f"{rec.cid} went {prev} -> {rec.result}")
            self.last_value[rec.cid] = rec.result
            if rec.op == "cas" and rec.ok:
                key = (rec.cid, rec.result.count)
                if key in self.winners and self.winners[key] != rec.caller:
                    self.flag("single_winner", tick,
                              f"count {key} won twice")
                self.winners[key] = rec.caller
            if rec.op == "cas" and rec.tag == "elect":
                n = self.elect_writes.get(rec.caller, 0) + 1
                self.elect_writes[rec.caller] = n
                if n > 1:
                    self.flag("write_budget", tick,
                              f"candidate {rec.caller} wrote {n} times")


class StoreMonitor(Monitor):
    """Committed-prefix read oracle and the quorum gate."""

    name = "store"

    def __init__(self):
        super().__init__()
        self.latest = {}
        self.commits = []
        self.rollbacks = []

    def on_emit(self, world, kind, fields):
        if kind == "store_commit":
            if fields["acks"] < fields["majority"]:
                self.flag("quorum_gate", world.now,
                          f"commit with {fields['acks']} acks "
                          f"< majority {fields['majority']}")
            self.latest[fields["lid"]] = (fields["owner"], fields["expiry"])
            self.commits.append((world.now, fields["lid"], fields["owner"],
                                 fields["expiry"]))
        elif kind == "store_read":
            expect = self.latest.get(fields["lid"], ABSENT)
            got = (fields["owner"], fields["expiry"])
            if got != expect:
                self.flag("committed_reads", world.now,
                          f"read of {fields['lid']} returned {got}, "
                          f"latest committed {expect}")
        elif kind == "rollback_detected":
            self.rollbacks.append((fields["tick"], fields["home"]))


class ActivityMonitor(Monitor):
    """Bookkeeping for reports: externalizations, acks, terminations."""

    name = "activity"

    def __init__(self):
        super().__init__()
        self.ext_counts = {}
        self.ext_ticks = {}
        self.events = []

    def on_emit(self, world, kind, fields):
        if kind == "externalize":
            uid = fields["uid"]
            self.ext_counts[uid] = self.ext_counts.get(uid, 0) + 1
            self.ext_ticks.setdefault(uid, []).append(world.now)
        elif kind in ("instance_rejected", "server_conflict", "replica_down",
                      "rollback_detected", "integrity_violation",
                      "replica_recovered", "terminated", "instance_blocked",
                      "store_unavailable"):
            self.events.append((world.now, kind, dict(fields)))


def standard_monitors(params):
    return [
        ElectionSafetyMonitor(),
        LeaseMonitor(params.get("epsilon", 1)),
        CounterMonitor(),
        StoreMonitor(),
        ActivityMonitor(),
    ]


def all_violations(monitors):
    out = []
    for m in monitors:
        out.extend(m.violations)
    out.sort(key=lambda v: (v[1], v[0]))
    return out
