"""Quorum-replicated lease store with rollback-protected persistence.

A fixed-membership cluster of replicas holds one totally ordered log of
conditional writes, serialized by a designated leader. The write path is
deliberately two-round:

1. probe round - the leader asks every peer for a liveness ack and only
   proceeds once a strict majority (counting itself) answers. Below
   quorum the request is answered `unavailable` with NO state changed
   anywhere, which is the behavior the availability attacks look for.
2. append round - the leader evaluates the conditional against its
   applied table, appends, applies, increments its counter device and
   re-seals, then replicates. Followers append+apply+increment+re-seal
   BEFORE acknowledging. The leader answers ok once a majority (itself
   included) has acknowledged.

Reads also take a probe round and are answered from the committed prefix
only, so an in-flight uncommitted write is never visible.

Each replica mirrors its counter device count; since the local election
guarantees one process per device, a failed conditional increment means
another instance (a clone that won the device) displaced us, and the
replica terminates on the spot rather than ack a write.

Conditional writes carry the expected (owner, expiry) row, not just the
owner: a lease server whose cache is behind must fail its commit even
when the owner happens to match, otherwise a stale regrant decision
could slip through while a fresher server has already extended the row.
"""

from __future__ import annotations

from .engine import Actor, CounterValue, register_actor
from .errors import DeviceUnavailable, IntegrityViolation, RollbackDetected
from . import sealing

ABSENT = ("", -1)  # row returned for a key with no lease record


@register_actor
class Replica(Actor):
    kind = "store_replica"
    kind_key = "replica"

    def __init__(self, uid, home, cid, peers, leader_uid, check_period=5):
        super().__init__(uid)
        self.home = home          # node identity: disk file + roster slot
        self.cid = cid
        self.peers = list(peers)  # other replicas' uids, this one excluded
        self.leader_uid = leader_uid
        self.check_period = check_period
        self.key = sealing.sealing_key(home)
        self.log = []             # [(lid, owner, expiry)] applied order
        self.table = {}           # applied view: lid -> (owner, expiry)
        self.commit_index = 0     # cluster-committed prefix length
        self.committed = {}       # committed view
        self.mirror = 0           # this process's view of its device count
        self.holder = uid         # device holder this process writes under
        self.serving = True
        # leader-side write/read coordination
        self.w_seq = 0
        self.pending = {}         # wid -> [phase, kind, fields...]

    # ---- lifecycle ------------------------------------------------------

    def majority(self):
        return (len(self.peers) + 1) // 2 + 1

    def is_leader(self):
        return self.uid == self.leader_uid

    def on_event(self, world, payload):
        tag = payload[0]
        if tag == "deliver":
            self._on_message(world, payload[1], payload[2], payload[3:])
        elif tag == "replica_start":
            self._arm_check(world)
        elif tag == "self_check":
            self._self_check(world)
        elif tag == "w_timeout":
            self._on_timeout(world, payload[1], payload[2])
        elif tag == "elected":
            self._on_elected(world, payload[1])
        elif tag == "displaced":
            self._die(world, "displaced")

    def _arm_check(self, world):
        world.schedule(world.now + self.check_period, self.uid, ("self_check",))

    def _self_check(self, world):
        if not self.serving:
            return
        # a clone that won the device moves (count, holder) past our mirror
        try:
            val = world.devices[self.cid].read_sync(world, self.uid)
        except DeviceUnavailable:
            self._arm_check(world)
            return
        if val != CounterValue(self.mirror, self.holder):
            self._die(world, "displaced")
            return
        self._arm_check(world)

    def _die(self, world, why):
        self.status = "terminated"
        self.serving = False
        world.emit("replica_down", uid=self.uid, why=why)

    # ---- recovery (restart or clone): election first, then unseal ------

    def _on_elected(self, world, cand_uid):
        """The recovery election was won; the device now reads one past
        the count this process observed, and that observed count is what
        the sealed file must carry for the resume to be legitimate."""
        cand = world.actors[cand_uid]
        observed = cand.observed.count
        blob = world.node_disk.get(self.home, b"")
        try:
            table = sealing.open_sealed(self.key, blob, observed)
        except RollbackDetected as e:
            self.serving = False
            self.status = "refused"
            world.emit("rollback_detected", uid=self.uid, home=self.home,
                       tick=world.now, detail=str(e))
            return
        except IntegrityViolation as e:
            self.serving = False
            self.status = "refused"
            world.emit("integrity_violation", uid=self.uid, home=self.home,
                       tick=world.now, detail=str(e))
            return
        self.genesis = table
        self.log = []
        self.table = {}
        self.commit_index = 0
        self._refresh_committed()
        self.mirror = observed + 1
        self.holder = cand_uid
        # fold the election's own increment into the sealed count so a
        # clean stop right here still resumes without a false alarm
        world.node_disk[self.home] = sealing.seal(self.key, table, self.mirror)
        self.serving = True
        self.status = "running"
        world.emit("replica_recovered", uid=self.uid, home=self.home,
                   tick=world.now)
        self._arm_check(world)

    # ---- message handling ----------------------------------------------

    def _on_message(self, world, sender, mtype, args):
        if not self.serving:
            return
        if mtype == "probe":
            world.send(self.uid, sender, "probe_ack", (args[0],))
        elif mtype == "probe_ack":
            self._on_probe_ack(world, args[0], sender)
        elif mtype == "append":
            self._on_append(world, sender, *args)
        elif mtype == "append_ack":
            self._on_append_ack(world, sender, args[0])
        elif mtype == "need_from":
            self._send_backlog(world, sender, args[0])
        elif mtype == "backlog":
            self._on_backlog(world, sender, args)
        elif mtype in ("s_write", "s_read", "s_load"):
            self._on_client(world, sender, mtype, args)

    # ---- client requests (leader only) ---------------------------------

    def _on_client(self, world, client, mtype, args):
        if not self.is_leader():
            return  # clients only talk to the configured leader
        wid = self.w_seq
        self.w_seq += 1
        need = self.majority() - 1
        if mtype == "s_write":
            req_id, lid, owner, expiry, exp_owner, exp_expiry = args
            entry = ["probe", "write", client, req_id,
                     (lid, owner, expiry, exp_owner, exp_expiry), ()]
        elif mtype == "s_read":
            req_id, lid = args
            entry = ["probe", "read", client, req_id, (lid,), ()]
        else:
            req_id, = args
            entry = ["probe", "load", client, req_id, (), ()]
        self.pending[wid] = entry
        if need == 0:
            self._quorum_reached(world, wid)
            return
        for p in self.peers:
            world.send(self.uid, p, "probe", (wid,))
        timeout = 2 * world.message_delay + 2
        world.schedule(world.now + timeout, self.uid,
                       ("w_timeout", wid, "probe"))

    def _on_probe_ack(self, world, wid, sender):
        entry = self.pending.get(wid)
        if entry is None or entry[0] != "probe":
            return
        acks = set(entry[5])
        acks.add(sender)
        entry[5] = tuple(sorted(acks))
        if len(acks) + 1 >= self.majority():
            self._quorum_reached(world, wid)

    def _quorum_reached(self, world, wid):
        entry = self.pending[wid]
        _, kind, client, req_id, fields, _ = entry
        if kind == "read":
            lid, = fields
            owner, expiry = self.committed.get(lid, ABSENT)
            world.emit("store_read", lid=lid, owner=owner, expiry=expiry)
            world.send(self.uid, client, "s_read_resp",
                       (req_id, "ok", lid, owner, expiry))
            del self.pending[wid]
        elif kind == "load":
            rows = tuple(
                (lid, owner, expiry)
                for lid, (owner, expiry) in sorted(self.committed.items())
            )
            world.send(self.uid, client, "s_load_resp", (req_id, "ok", rows))
            del self.pending[wid]
        else:
            self._start_commit(world, wid)

    def applied_row(self, lid):
        """Current row in the applied view, genesis rows included."""
        if lid in self.table:
            return self.table[lid]
        g = getattr(self, "genesis", None)
        if g and lid in g:
            return g[lid]
        return ABSENT

    def _start_commit(self, world, wid):
        entry = self.pending[wid]
        _, _, client, req_id, fields, _ = entry
        lid, owner, expiry, exp_owner, exp_expiry = fields
        current = self.applied_row(lid)
        if exp_owner is None:
            ok = current == ABSENT
        else:
            ok = current == (exp_owner, exp_expiry)
        if not ok:
            world.send(self.uid, client, "s_write_resp",
                       (req_id, "conflict", lid, current[0], current[1]))
            del self.pending[wid]
            return
        if not self._apply(world, (lid, owner, expiry)):
            return  # displaced mid-apply; no ack goes out
        idx = len(self.log) - 1
        if self.majority() == 1:
            self._commit(world, wid, idx)
            return
        entry[0] = "commit"
        entry[5] = ()
        entry.append(idx)
        for p in self.peers:
            world.send(self.uid, p, "append",
                       (idx, lid, owner, expiry, self.commit_index))
        timeout = 2 * world.message_delay + 2
        world.schedule(world.now + timeout, self.uid,
                       ("w_timeout", wid, "commit"))

    def _on_append_ack(self, world, sender, idx):
        for wid, entry in list(self.pending.items()):
            if entry[0] == "commit" and entry[6] == idx:
                acks = set(entry[5])
                acks.add(sender)
                entry[5] = tuple(sorted(acks))
                if len(acks) + 1 >= self.majority():
                    self._commit(world, wid, idx)
                return

    def _commit(self, world, wid, idx):
        entry = self.pending.pop(wid)
        client, req_id = entry[2], entry[3]
        self.commit_index = max(self.commit_index, idx + 1)
        self._refresh_committed()
        lid, owner, expiry = self.log[idx]
        world.emit("store_commit", lid=lid, owner=owner, expiry=expiry,
                   acks=len(entry[5]) + 1, majority=self.majority(), idx=idx)
        world.send(self.uid, client, "s_write_resp",
                   (req_id, "ok", lid, owner, expiry))

    def _refresh_committed(self):
        view = dict(self.genesis) if hasattr(self, "genesis") else {}
        for lid, owner, expiry in self.log[:self.commit_index]:
            view[lid] = (owner, expiry)
        self.committed = view

    def _on_timeout(self, world, wid, phase):
        entry = self.pending.get(wid)
        if entry is None or entry[0] != phase:
            return  # the request moved past this phase; timer is stale
        del self.pending[wid]
        client, req_id, kind = entry[2], entry[3], entry[1]
        resp = {"write": "s_write_resp", "read": "s_read_resp",
                "load": "s_load_resp"}[kind]
        world.emit("store_unavailable", op=kind)
        world.send(self.uid, client, resp, (req_id, "unavailable"))

    # ---- replication (followers) ---------------------------------------

    def _on_append(self, world, sender, idx, lid, owner, expiry, commit_idx):
        if idx > len(self.log):
            world.send(self.uid, sender, "need_from", (len(self.log),))
            return
        if idx == len(self.log):
            if not self._apply(world, (lid, owner, expiry)):
                return
        self.commit_index = max(self.commit_index, min(commit_idx, len(self.log)))
        self._refresh_committed()
        world.send(self.uid, sender, "append_ack", (idx,))

    def _send_backlog(self, world, peer, start):
        rows = tuple(self.log[start:])
        world.send(self.uid, peer, "backlog", (start, rows, self.commit_index))

    def _on_backlog(self, world, sender, args):
        start, rows, commit_idx = args
        for i, (lid, owner, expiry) in enumerate(rows):
            idx = start + i
            if idx == len(self.log):
                if not self._apply(world, (lid, owner, expiry)):
                    return
        self.commit_index = max(self.commit_index, min(commit_idx, len(self.log)))
        self._refresh_committed()
        if rows:
            world.send(self.uid, sender, "append_ack", (len(self.log) - 1,))

    def _apply(self, world, row):
        """Append+apply one entry: counter increment and re-seal happen
        before anything is acknowledged. Returns False when displaced."""
        device = world.devices[self.cid]
        expected = CounterValue(self.mirror, self.holder)
        proposed = CounterValue(self.mirror + 1, self.holder)
        status, count, holder = device.cas_sync(
            world, self.uid, expected, proposed)
        if status != "ok":
            self._die(world, "displaced")
            return False
        self.mirror += 1
        lid, owner, expiry = row
        self.log.append(row)
        self.table[lid] = (owner, expiry)
        full = dict(self.genesis) if hasattr(self, "genesis") else {}
        full.update(self.table)
        world.node_disk[self.home] = sealing.seal(self.key, full, self.mirror)
        return True

    # ---- snapshot -------------------------------------------------------

    def snap(self):
        return (
            self.home, self.cid, tuple(self.peers), self.leader_uid,
            self.check_period, self.status, self.serving,
            tuple(self.log), self.commit_index, self.mirror, self.holder,
            self.w_seq,
            tuple(sorted((wid, tuple(entry))
                         for wid, entry in self.pending.items())),
            tuple(sorted(getattr(self, "genesis", {}).items())),
        )

    @classmethod
    def from_snap(cls, uid, state):
        (home, cid, peers, leader_uid, check_period, status, serving,
         log, commit_index, mirror, holder, w_seq, pending, genesis) = state
        r = cls(uid, home, cid, peers, leader_uid, check_period)
        r.status = status
        r.serving = serving
        r.log = [tuple(e) for e in log]
        r.commit_index = commit_index
        r.mirror = mirror
        r.holder = holder
        r.w_seq = w_seq
        r.pending = {wid: list(entry) for wid, entry in pending}
        if genesis:
            r.genesis = {lid: tuple(v) for lid, v in genesis}
        r.table = {}
        for lid, owner, expiry in r.log:
            r.table[lid] = (owner, expiry)
        r._refresh_committed()
        return r


def spawn_replica_process(world, home):
    """Start a replica process for node `home`: a restart when the old
    process is gone (same uid), a clone when it still runs (fresh uid).
    Either way the new process must win the node's election before it
    may unseal state and serve."""
    from .election import spawn_candidate

    old = world.actors[home]
    if old.status == "terminated":
        uid = home
    else:
        uid = world.fresh_id(home + "c")
    r = Replica(uid, home, old.cid, old.peers, old.leader_uid,
                old.check_period)
    r.serving = False
    r.status = "electing"
    if uid == home:
        world.replace_actor(r)
    else:
        world.add_actor(r)
    cand_uid = world.fresh_id(uid + "e")
    spawn_candidate(world, cand_uid, old.cid, world.now, parent=uid)
    return r


def provision_store(world, replica_uids, leader_uid, devices, genesis,
                    check_period=5):
    """Stand up a cluster whose replicas already own their devices and
    whose genesis table is sealed at count 0 (provisioning predates the
    simulated run, so it costs no counter writes)."""
    replicas = []
    for uid in replica_uids:
        peers = [p for p in replica_uids if p != uid]
        r = Replica(uid, uid, devices[uid], peers, leader_uid, check_period)
        if genesis:
            r.genesis = dict(genesis)
        r._refresh_committed()
        world.add_actor(r)
        world.node_disk[uid] = sealing.seal(r.key, dict(genesis or {}), 0)
        world.devices[devices[uid]].holder = uid
        world.schedule(world.now, uid, ("replica_start",))
        replicas.append(r)
    return replicas
