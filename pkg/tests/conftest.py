"""Shared fixtures and tiny driver actors for the test suite."""

from __future__ import annotations

import pytest

from leaselab.engine import Actor, CounterDevice, World, register_actor
from leaselab.lease import provision_server
from leaselab.monitors import Monitor
from leaselab.store import provision_store


class Catcher(Monitor):
    """Records every emit as (tick, kind, fields), optionally filtered."""

    name = "catch"

    def __init__(self, kinds=None):
        super().__init__()
        self.kinds = kinds
        self.rows = []

    def on_emit(self, world, kind, fields):
        if self.kinds is None or kind in self.kinds:
            self.rows.append((world.now, kind, dict(fields)))

    def of(self, kind):
        return [r for r in self.rows if r[1] == kind]


@register_actor
class Recorder(Actor):
    """Appends every payload it receives, in processing order."""

    kind_key = "test_recorder"

    def __init__(self, uid):
        super().__init__(uid)
        self.got = []

    def on_event(self, world, payload):
        self.got.append((world.now, payload))

    def snap(self):
        return (self.status, tuple(self.got))

    @classmethod
    def from_snap(cls, uid, state):
        r = cls(uid)
        r.status, got = state
        r.got = [tuple(g) for g in got]
        return r


@register_actor
class Probe(Actor):
    """Scriptable endpoint: fires messages on cue, records every delivery.

    Used to drive the store and lease server directly, without the full
    app runtime in the way.
    """

    kind = "app_instance"
    kind_key = "test_probe"

    def __init__(self, uid):
        super().__init__(uid)
        self.resps = []

    def on_event(self, world, payload):
        if payload[0] == "deliver":
            self.resps.append((world.now, payload[2], tuple(payload[3:])))
        elif payload[0] == "send":
            _, target, mtype, data = payload
            target = world.routes.get(target, target)
            world.send(self.uid, target, mtype, tuple(data))

    def of(self, mtype):
        return [r for r in self.resps if r[1] == mtype]

    def snap(self):
        return (self.status, tuple(self.resps))

    @classmethod
    def from_snap(cls, uid, state):
        p = cls(uid)
        p.status, resps = state
        p.resps = [tuple(r) for r in resps]
        return p


def store_world(replicas=1, genesis=None, params=None, seed=1,
                clock_scripts=None):
    """World with a provisioned store cluster and a probe client."""
    p = {"epsilon": 0, "period": 5, "message_delay": 1}
    p.update(params or {})
    w = World(p, seed=seed, clock_scripts=clock_scripts)
    uids = [f"r{i + 1}" for i in range(replicas)]
    devmap = {}
    for uid in uids:
        cid = "d" + uid
        w.add_device(CounterDevice(cid))
        devmap[uid] = cid
    provision_store(w, uids, uids[0], devmap, dict(genesis or {}),
                    check_period=p["period"])
    w.routes["store"] = uids[0]
    probe = Probe("px")
    w.add_actor(probe)
    return w, probe


def lease_world(genesis, params=None, seed=3, clock_scripts=None):
    """store_world plus one provisioned lease server."""
    p = {"epsilon": 1, "period": 5, "lease_length": 8, "message_delay": 1}
    p.update(params or {})
    w, probe = store_world(1, genesis, p, seed=seed,
                           clock_scripts=clock_scripts)
    provision_server(w, "ls1", dict(genesis or {}))
    w.routes["lease"] = "ls1"
    return w, probe


def probe_send(world, at, target, mtype, data):
    world.schedule(at, "px", ("send", target, mtype, tuple(data)))


@pytest.fixture
def catcher():
    return Catcher()
