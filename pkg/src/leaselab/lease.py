"""Lease service: grant/renew decisions from a cache, commits to the store.

A server instance answers each lease request from its in-memory cache.
The grant predicate, with `(owner, expiry)` the cached row and `tau` the
server's fresh trusted read:

    grant  iff  requester == owner            (renewal, even if expired)
            or  owner is unowned
            or  tau >= expiry + 2*eps + P     (regrant to a new instance)

The regrant delay covers the worst case where the previous holder's clock
runs `2*eps` behind the server's and its last granted term stretched P
past what the server saw.

Every grant is a store write conditioned on the full cached row. Cloned
server instances each believe their own cache; the store's total order
makes exactly one of two conflicting commits succeed, and a server whose
commit conflicts terminates itself immediately, never having answered
the requester. Conditioning on owner alone would not be enough: a server
whose cache missed a pure expiry extension could regrant over a live
holder without tripping the condition.

One request is evaluated per engine tick (each evaluation takes exactly
one trusted read), and at most one commit is in flight at a time so every
decision runs against a cache no older than the previous commit.
"""

from __future__ import annotations

from .engine import Actor, register_actor

RETRY_TICKS = 1  # delay before re-kicking a deferred evaluation


@register_actor
class LeaseServer(Actor):
    kind = "lease_server"
    kind_key = "lease_server"

    def __init__(self, uid, lease_length, epsilon, period):
        super().__init__(uid)
        self.lease_length = lease_length
        self.epsilon = epsilon
        self.period = period
        self.cache = {}          # lid -> (owner, expiry)
        self.queue = []          # [(lid, requester, stamp, client)]
        self.busy = False        # a commit or reload is in flight
        self.last_eval_tick = None
        self.req_seq = 0
        self.inflight = None     # (req_id, lid, requester, client, new_expiry)
        self.kick_pending = False

    def regrant_at(self, expiry):
        return expiry + 2 * self.epsilon + self.period

    def on_event(self, world, payload):
        tag = payload[0]
        if tag == "deliver":
            self._on_message(world, payload[1], payload[2], payload[3:])
        elif tag == "kick":
            self.kick_pending = False
            self._pump(world)
        elif tag == "store_timeout":
            self._on_store_timeout(world, payload[1])

    def _on_message(self, world, sender, mtype, args):
        if mtype == "lease_req":
            lid, requester, stamp = args
            # A newer request supersedes one still queued from the same
            # requester for the same lease; answering the stale one would
            # only hand back an already-expired view.
            self.queue = [q for q in self.queue
                          if not (q[0] == lid and q[1] == requester)]
            self.queue.append((lid, requester, stamp, sender))
            self._kick(world, world.now)
        elif mtype == "s_write_resp":
            self._on_write_resp(world, args)
        elif mtype == "s_load_resp":
            self._on_load_resp(world, args)

    def _kick(self, world, at):
        if not self.kick_pending:
            self.kick_pending = True
            world.schedule(at, self.uid, ("kick",))

    def _pump(self, world):
        if self.busy or not self.queue:
            return
        if self.last_eval_tick == world.now:
            self._kick(world, world.now + RETRY_TICKS)
            return
        lid, requester, stamp, client = self.queue.pop(0)
        self.last_eval_tick = world.now
        tau = world.read_clock(self.uid)
        row = self.cache.get(lid)
        if row is None:
            world.send(self.uid, client, "lease_resp",
                       (lid, "rejected", 0))
            self._maybe_continue(world)
            return
        owner, expiry = row
        if requester == owner or owner == "" or tau >= self.regrant_at(expiry):
            new_expiry = stamp + self.lease_length
            req_id = f"{self.uid}.{self.req_seq}"
            self.req_seq += 1
            self.busy = True
            self.inflight = (req_id, lid, requester, client, new_expiry)
            world.emit("grant_decision", server=self.uid, lid=lid,
                       requester=requester, prev_owner=owner,
                       prev_expiry=expiry, server_tt=tau,
                       new_expiry=new_expiry)
            world.send(self.uid, world.route("store"), "s_write",
                       (req_id, lid, requester, new_expiry, owner, expiry))
            timeout = 4 * world.message_delay + 6
            world.schedule(world.now + timeout, self.uid,
                           ("store_timeout", req_id))
        else:
            world.emit("grant_rejected", server=self.uid, lid=lid,
                       requester=requester, owner=owner, expiry=expiry,
                       server_tt=tau)
            world.send(self.uid, client, "lease_resp", (lid, "rejected", 0))
            self._maybe_continue(world)

    def _maybe_continue(self, world):
        if self.queue and not self.busy:
            self._kick(world, world.now + RETRY_TICKS)

    def _on_write_resp(self, world, args):
        req_id, status = args[0], args[1]
        if self.inflight is None or self.inflight[0] != req_id:
            return
        _, lid, requester, client, new_expiry = self.inflight
        if status == "ok":
            # The commit confirms exactly the row we wrote, so the cache
            # entry can be fixed up in place; divergence on any other row
            # still surfaces as a conflict on its next conditional write.
            self.cache[lid] = (requester, new_expiry)
            world.emit("lease_granted", server=self.uid, lid=lid,
                       owner=requester, expiry=new_expiry)
            world.send(self.uid, client, "lease_resp",
                       (lid, "granted", new_expiry))
            self.busy = False
            self.inflight = None
            self._maybe_continue(world)
        elif status == "conflict":
            # another server instance owns the store's reality
            self.status = "terminated"
            world.emit("server_conflict", server=self.uid, lid=lid)
        else:  # unavailable
            self.busy = False
            self.inflight = None
            world.send(self.uid, client, "lease_resp", (lid, "unavailable", 0))
            self._maybe_continue(world)

    def _on_load_resp(self, world, args):
        req_id, status = args[0], args[1]
        if self.inflight is None or self.inflight[0] != req_id:
            return
        self.inflight = None
        if status == "ok":
            rows = args[2]
            self.cache = {lid: (owner, expiry) for lid, owner, expiry in rows}
        # on unavailable, keep the cache we already had
        self.busy = False
        self._maybe_continue(world)

    def _on_store_timeout(self, world, req_id):
        if self.inflight is None or self.inflight[0] != req_id:
            return
        _, lid, requester, client, _ = self.inflight
        self.inflight = None
        self.busy = False
        if client is not None:
            world.send(self.uid, client, "lease_resp", (lid, "unavailable", 0))
        self._maybe_continue(world)

    def snap(self):
        return (
            self.lease_length, self.epsilon, self.period, self.status,
            tuple(sorted(self.cache.items())),
            tuple(self.queue), self.busy, self.last_eval_tick,
            self.req_seq, self.inflight, self.kick_pending,
        )

    @classmethod
    def from_snap(cls, uid, state):
        (lease_length, epsilon, period, status, cache, queue, busy,
         last_eval, req_seq, inflight, kick_pending) = state
        s = cls(uid, lease_length, epsilon, period)
        s.status = status
        s.cache = {lid: tuple(v) for lid, v in cache}
        s.queue = [tuple(q) for q in queue]
        s.busy = busy
        s.last_eval_tick = last_eval
        s.req_seq = req_seq
        s.inflight = None if inflight is None else tuple(inflight)
        s.kick_pending = kick_pending
        return s


def provision_server(world, uid, genesis):
    params = world.params
    s = LeaseServer(
        uid,
        lease_length=params.get("lease_length", 5),
        epsilon=params.get("epsilon", 1),
        period=params.get("period", 5),
    )
    s.cache = dict(genesis or {})
    world.add_actor(s)
    return s
