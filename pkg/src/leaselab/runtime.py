"""Runtime wrapper around a modeled application instance.

The runtime owns the lease view and gates every externally visible
effect on it. Once per tick (the term cadence) it takes one trusted
read `tau` and then:

* `tau < expiry`  - the lease is locally valid: the pending unit of
  work externalizes, and a renewal goes out early when the remaining
  validity is inside the renew margin,
* `tau >= expiry` - all threads block: nothing externalizes until the
  server answers a renewal, and a rejected renewal terminates the
  instance for good.

A fresh instance externalizes nothing before its first grant, so a
clone racing a live holder dies with zero visible effects: its one
lease request is rejected and the runtime self-terminates. Targeted
client transactions queue inside the enclave and are acknowledged only
from within a tick whose gate passed, which is what makes the
fork-and-steer attack inert.
"""

from __future__ import annotations

from .engine import Actor, register_actor

RETRY_AFTER = 3    # re-send an unanswered lease request after this many ticks


@register_actor
class AppInstance(Actor):
    kind = "app_instance"
    kind_key = "app_instance"

    def __init__(self, uid, app_id, lease_id, workload=None):
        super().__init__(uid)
        self.app_id = app_id
        self.lease_id = lease_id
        self.phase = "starting"   # starting | running | blocked | terminated
        self.view_expiry = None
        self.last_read = None
        self.pending_req_tick = None
        self.ext_count = 0
        self.acked = 0
        self.boot_tick = None
        self.workload = None if workload is None else tuple(workload)
        self.txn_queue = []

    def locally_valid(self, tau):
        return self.view_expiry is not None and tau < self.view_expiry

    def on_event(self, world, payload):
        tag = payload[0]
        if tag == "boot":
            self._boot(world)
        elif tag == "tick":
            self._tick(world)
        elif tag == "deliver":
            self._on_message(world, payload[1], payload[2], payload[3:])

    def _boot(self, world):
        self.boot_tick = world.now
        tau = world.read_clock(self.uid)
        self.last_read = tau
        self._send_request(world, tau)
        world.schedule(world.now + 1, self.uid, ("tick",))

    def _send_request(self, world, stamp):
        self.pending_req_tick = world.now
        world.send(self.uid, world.route("lease"), "lease_req",
                   (self.lease_id, self.uid, stamp))

    def _tick(self, world):
        tau = world.read_clock(self.uid)
        self.last_read = tau
        if self.phase in ("starting", "blocked"):
            if (self.pending_req_tick is None
                    or world.now - self.pending_req_tick >= RETRY_AFTER):
                self._send_request(world, tau)
        elif self.phase == "running":
            if not self.locally_valid(tau):
                self.phase = "blocked"
                world.emit("instance_blocked", uid=self.uid,
                           app_id=self.app_id, tau=tau,
                           expiry=self.view_expiry)
                self._send_request(world, tau)
            else:
                self._work(world, tau)
                # Keep exactly one renewal in flight at all times. The
                # grant round trip scales with store depth, so any fixed
                # renew-ahead margin would starve behind a slower store;
                # continuous renewal advances the view at the fastest rate
                # the service can sustain.
                if self.pending_req_tick is None:
                    self._send_request(world, tau)
        world.schedule(world.now + 1, self.uid, ("tick",))

    def _work(self, world, tau):
        offset = world.now - self.boot_tick
        if self.workload is not None and offset not in self.workload:
            return  # scripted workload holds no unit for this tick
        self.ext_count += 1
        world.emit("externalize", uid=self.uid, app_id=self.app_id,
                   lid=self.lease_id, tau=tau, expiry=self.view_expiry)
        while self.txn_queue:
            client, n = self.txn_queue.pop(0)
            self.acked += 1
            world.send(self.uid, client, "txn_ack", (n,))
            world.emit("txn_ack", uid=self.uid, app_id=self.app_id, n=n)

    def _on_message(self, world, sender, mtype, args):
        if mtype == "lease_resp":
            lid, verdict, expiry = args
            if lid != self.lease_id:
                return
            self.pending_req_tick = None
            if verdict == "granted":
                # Responses can arrive out of order under message delays; a
                # stale grant must never shrink a view we already hold.
                if self.view_expiry is None or expiry > self.view_expiry:
                    self.view_expiry = expiry
                if self.phase in ("starting", "blocked"):
                    self.phase = "running"
                world.emit("lease_view", uid=self.uid, app_id=self.app_id,
                           expiry=self.view_expiry)
            elif verdict == "rejected":
                self.phase = "terminated"
                self.status = "terminated"
                world.emit("instance_rejected", uid=self.uid,
                           app_id=self.app_id, ext_count=self.ext_count)
            # unavailable: the next tick retries
        elif mtype == "txn":
            self.txn_queue.append((sender, args[0]))

    def describe(self):
        return f"app({self.uid}, {self.phase})"

    def snap(self):
        return (
            self.app_id, self.lease_id, self.phase, self.status,
            self.view_expiry, self.last_read, self.pending_req_tick,
            self.ext_count, self.acked, self.boot_tick, self.workload,
            tuple(self.txn_queue),
        )

    @classmethod
    def from_snap(cls, uid, state):
        (app_id, lease_id, phase, status, view_expiry, last_read,
         pending, ext_count, acked, boot_tick, workload, txns) = state
        a = cls(uid, app_id, lease_id, workload)
        a.phase = phase
        a.status = status
        a.view_expiry = view_expiry
        a.last_read = last_read
        a.pending_req_tick = pending
        a.ext_count = ext_count
        a.acked = acked
        a.boot_tick = boot_tick
        a.txn_queue = [tuple(t) for t in txns]
        return a


@register_actor
class Client(Actor):
    """Outside-world observer: fires transactions at an app service and
    counts which instance acknowledged them."""

    kind = "app_instance"
    kind_key = "client"

    def __init__(self, uid, service, sends=()):
        super().__init__(uid)
        self.service = service
        self.sends = tuple(sends)  # ticks at which to send one txn
        self.n = 0
        self.acks = []

    def on_event(self, world, payload):
        tag = payload[0]
        if tag == "fire":
            target = world.route(self.service)
            world.send(self.uid, target, "txn", (self.n,))
            self.n += 1
        elif tag == "deliver" and payload[2] == "txn_ack":
            self.acks.append((world.now, payload[1], payload[3]))

    def snap(self):
        return (self.service, self.sends, self.status, self.n,
                tuple(self.acks))

    @classmethod
    def from_snap(cls, uid, state):
        service, sends, status, n, acks = state
        c = cls(uid, service, sends)
        c.status = status
        c.n = n
        c.acks = [tuple(a) for a in acks]
        return c


def spawn_app(world, uid, app_id, lease_id, at, workload=None):
    a = AppInstance(uid, app_id, lease_id, workload)
    world.add_actor(a)
    world.schedule(at, uid, ("boot",))
    world.routes.setdefault("app:" + app_id, uid)
    return a


def spawn_clone(world, app_id):
    """The instantiation attack: a fresh process of the same service
    image, pointed at the same lease."""
    proto = None
    for a in world.actors.values():
        if isinstance(a, AppInstance) and a.app_id == app_id:
            proto = a
            break
    if proto is None:
        raise KeyError(f"no app instance for {app_id}")
    uid = world.fresh_id(app_id.lower() + "x")
    return spawn_app(world, uid, app_id, proto.lease_id, world.now)


def spawn_client(world, uid, service, sends):
    c = Client(uid, service, sends)
    world.add_actor(c)
    for t in sends:
        world.schedule(t, uid, ("fire",))
    return c
