"""Deterministic discrete-event engine with a fault-injectable network.

One engine instance (`World`) owns every piece of protocol state: the actors,
the monotonic counter devices, the trusted clock, the in-flight message
queue, and the adversary's standing rules. Events are totally ordered by
`(at, seq)` where `seq` is the insertion sequence number, so a run is a pure
function of the scenario and the chooser that resolves nondeterminism.

Nondeterminism is funneled through a single `choose(n)` hook:

* `RandomChooser`   - seeded RNG, used by randomized simulation,
* `ScriptChooser`   - fixed choice vector, used to replay traces,
* `CountingChooser` - greedy-first with option counts recorded, used by the
                      schedule explorer to enumerate choice vectors.

The whole mutable state can be snapshotted to a canonical tuple (and
restored), which is what the explorer hashes for deduplication and what the
trace digests cover. Queue sequence numbers are renumbered inside snapshots:
future behavior depends only on their relative order, and renumbering lets
two interleavings that converge on the same protocol state be recognized as
equal.
"""

from __future__ import annotations

import heapq
import random
from typing import NamedTuple

from . import canon
from .errors import (
    ClockDisciplineError,
    DeviceUnavailable,
    InvalidProposal,
    SchedulingInPast,
)

# Actor kinds (spec'd roster plus "net" pseudo-actor for wire effects)
APP_INSTANCE = "app_instance"
LEASE_SERVER = "lease_server"
STORE_REPLICA = "store_replica"
COUNTER_DEVICE = "counter_device"
CLOCK_SOURCE = "clock_source"
ADVERSARY = "adversary"


class ActorId(NamedTuple):
    kind: str
    uid: str


class SimEvent(NamedTuple):
    at: int
    seq: int
    target: str
    payload: tuple


class TraceRecord(NamedTuple):
    tick: int
    actor: str
    event: str
    digest: str


class ScheduleTrace:
    """Ordered record of one run; replaying it must reproduce the digests."""

    def __init__(self):
        self.records: list[TraceRecord] = []

    def append(self, tick, actor, event, digest=""):
        self.records.append(TraceRecord(tick, actor, event, digest))

    def export_lines(self):
        return [
            f"{r.tick}\t{r.actor}\t{r.event}\t{r.digest}" for r in self.records
        ]

    def write(self, path):
        with open(path, "w") as fh:
            for line in self.export_lines():
                fh.write(line + "\n")

    @staticmethod
    def parse_line(line):
        tick, actor, event, dig = line.rstrip("\n").split("\t")
        return TraceRecord(int(tick), actor, event, dig)

    def digests(self):
        return [r.digest for r in self.records]

    def __len__(self):
        return len(self.records)


# ---------------------------------------------------------------------------
# Choosers


class RandomChooser:
    def __init__(self, seed):
        self.rng = random.Random(seed)
        self.picks = []

    def choose(self, n):
        i = self.rng.randrange(n) if n > 1 else 0
        self.picks.append(i)
        return i


class ScriptChooser:
    """Replays a recorded choice vector; raises if the script runs dry."""

    def __init__(self, script):
        self.script = list(script)
        self.pos = 0
        self.picks = []

    def choose(self, n):
        if self.pos >= len(self.script):
            raise RuntimeError("choice script exhausted")
        i = self.script[self.pos]
        self.pos += 1
        if not 0 <= i < n:
            raise RuntimeError(f"scripted choice {i} out of range 0..{n - 1}")
        self.picks.append(i)
        return i


class CountingChooser:
    """Follows a prefix, then picks option 0 while recording option counts.

    The explorer uses the recorded counts to enumerate sibling choice
    vectors without re-instrumenting the handlers.
    """

    def __init__(self, prefix=()):
        self.prefix = tuple(prefix)
        self.pos = 0
        self.picks = []
        self.counts = []

    def choose(self, n):
        if self.pos < len(self.prefix):
            i = self.prefix[self.pos]
        else:
            i = 0
        self.pos += 1
        self.picks.append(i)
        self.counts.append(n)
        return i


# ---------------------------------------------------------------------------
# Trusted clock (R1 bounded deviation, R2 strict per-reader monotonicity)


class TrustedClock:
    """Per-reader trusted time with adversary-chosen bounded error.

    Each read returns `now + err` with `err` in `[-epsilon, +epsilon]`,
    clamped up to one past the reader's previous value so the per-reader
    sequence is strictly increasing. The clamp can only reach `now +
    epsilon` because a reader may take at most one timestamp per tick
    (enforced here); a second same-tick read raises ClockDisciplineError.

    A scenario may pin the error sequence of individual readers
    (`scripts`): either a list consumed one entry per read, or a single
    int used for every read. This is how boundary-exact regression
    scenarios remove the one remaining degree of freedom.
    """

    def __init__(self, epsilon, scripts=None):
        self.epsilon = int(epsilon)
        self.scripts = {
            k: (v if isinstance(v, int) else list(v))
            for k, v in (scripts or {}).items()
        }
        self.last = {}
        self.last_tick = {}
        self.spos = {}

    def read(self, world, reader):
        t = world.now
        if self.last_tick.get(reader) == t:
            raise ClockDisciplineError(
                f"{reader} read the clock twice at tick {t}"
            )
        eps = self.epsilon
        script = self.scripts.get(reader)
        pos = self.spos.get(reader, 0)
        if isinstance(script, int):
            err = script
            if abs(err) > eps:
                raise ValueError(f"scripted clock error {err} exceeds epsilon")
        elif script is not None and pos < len(script):
            err = script[pos]
            self.spos[reader] = pos + 1
            if abs(err) > eps:
                raise ValueError(f"scripted clock error {err} exceeds epsilon")
        elif eps == 0:
            err = 0
        else:
            err = world.choose(2 * eps + 1) - eps
        raw = t + err
        prev = self.last.get(reader)
        value = raw if prev is None else max(raw, prev + 1)
        assert abs(value - t) <= eps, "bounded-deviation invariant broke"
        self.last[reader] = value
        self.last_tick[reader] = t
        return value

    def snap(self):
        return (
            tuple(sorted(self.last.items())),
            tuple(sorted(self.last_tick.items())),
            tuple(sorted(self.spos.items())),
        )

    def restore(self, state):
        last, last_tick, spos = state
        self.last = dict(last)
        self.last_tick = dict(last_tick)
        self.spos = dict(spos)


# ---------------------------------------------------------------------------
# Monotonic counter device


class CounterValue(NamedTuple):
    count: int
    holder: str  # "" is the distinguished minimal holder (unowned)


def counter_less(a: CounterValue, b: CounterValue) -> bool:
    """Total order on (count, holder) pairs."""
    return a.count < b.count or (a.count == b.count and a.holder < b.holder)


class CounterDevice:
    """Non-clonable counter with linearizable reads and conditional writes.

    Operations linearize at the invoking actor's current transition (the
    value is captured or swapped immediately); the result travels back as a
    `("mc_resp", ...)` event after the configured latency, which is 0 for
    node-local election use and larger when modeling verified-write cost.
    """

    def __init__(self, cid, write_latency=0, read_latency=0):
        self.cid = cid
        self.count = 0
        self.holder = ""
        self.write_latency = int(write_latency)
        self.read_latency = int(read_latency)

    def value(self):
        return CounterValue(self.count, self.holder)

    def read(self, world, caller, tag=""):
        if world.is_isolated(self.cid):
            raise DeviceUnavailable(self.cid)
        val = self.value()
        world.record_counter_op(self.cid, caller, "read", None, val,
                                self.read_latency, tag=tag)
        world.schedule(
            world.now + self.read_latency, caller,
            ("mc_resp", self.cid, "read", tag, val.count, val.holder),
        )

    def read_sync(self, world, caller):
        """Co-located read: value returned in the caller's own transition."""
        if world.is_isolated(self.cid):
            raise DeviceUnavailable(self.cid)
        val = self.value()
        world.record_counter_op(self.cid, caller, "read", None, val, 0,
                                tag="sync")
        return val

    def cond_increment(self, world, caller, expected, proposed, tag=""):
        result = self._apply_cas(world, caller, expected, proposed,
                                 self.write_latency, tag)
        world.schedule(
            world.now + self.write_latency, caller,
            ("mc_resp", self.cid, "cas", tag) + result,
        )

    def cas_sync(self, world, caller, expected, proposed, tag="sync"):
        """Co-located conditional increment; the verified-write latency is
        charged to cost accounting rather than the schedule."""
        return self._apply_cas(world, caller, expected, proposed, 0, tag)

    def _apply_cas(self, world, caller, expected, proposed, latency, tag):
        if proposed.count != expected.count + 1:
            raise InvalidProposal(
                f"proposed count {proposed.count} != expected {expected.count}+1"
            )
        if world.is_isolated(self.cid):
            raise DeviceUnavailable(self.cid)
        actual = self.value()
        if actual == expected:
            self.count, self.holder = proposed.count, proposed.holder
            result = ("ok", proposed.count, proposed.holder)
        else:
            result = ("stale", actual.count, actual.holder)
        world.record_counter_op(self.cid, caller, "cas", (expected, proposed),
                                self.value() if result[0] == "ok" else actual,
                                latency, ok=result[0] == "ok", tag=tag)
        return result

    def snap(self):
        return (self.count, self.holder)

    def restore(self, state):
        self.count, self.holder = state


class CounterOpRecord(NamedTuple):
    cid: str
    caller: str
    op: str  # "read" | "cas"
    invoke: int
    respond: int
    arg: tuple | None  # (expected, proposed) for cas
    result: CounterValue
    ok: bool
    tag: str


# ---------------------------------------------------------------------------
# The engine


ACTOR_TYPES: dict[str, type] = {}


def register_actor(cls):
    """Class decorator: make an actor type restorable from snapshots."""
    ACTOR_TYPES[cls.kind_key] = cls
    return cls


class World:
    def __init__(self, params=None, seed=0, explore=False,
                 trace=False, digests=False, clock_scripts=None):
        self.params = dict(params or {})
        self.seed = seed
        self.explore = explore
        self.now = 0
        self.seq = 0
        self.queue: list[tuple] = []
        self.actors: dict[str, object] = {}
        self.devices: dict[str, CounterDevice] = {}
        self.routes: dict[str, str] = {}
        self.clock = TrustedClock(self.params.get("epsilon", 0), clock_scripts)
        self.message_delay = self.params.get("message_delay", 1)
        self.chooser = RandomChooser(seed) if not explore else None
        self._id_counter = 0
        # adversary standing state
        self.isolated_until: dict[str, int] = {}
        self.pause_until: dict[str, int] = {}
        self.delay_rules: list[list] = []  # [sender,target,mtype,nth,extra,hits]
        self.drop_rules: list[list] = []   # [sender,target,mtype,nth,hits]
        self.message_log: list[tuple] = []
        self.node_disk: dict[str, bytes] = {}  # per-node sealed state files
        self.disk_snapshots: dict[str, bytes] = {}
        self.last_spawn = None  # uid of the most recent adversarial spawn
        # observability (never part of snapshots)
        self.tracing = trace
        self.digesting = digests
        self.trace = ScheduleTrace() if trace else None
        self.monitors: list = []
        self.counter_ops: list[CounterOpRecord] = []
        self.counter_op_log = True
        self.cost = {"counter_writes": 0, "counter_write_ticks": 0}

    # -- registration -----------------------------------------------------

    def add_actor(self, actor):
        if actor.uid in self.actors:
            raise ValueError(f"duplicate actor uid {actor.uid}")
        self.actors[actor.uid] = actor
        return actor

    def replace_actor(self, actor):
        """Restart path: a terminated actor's uid is taken over."""
        old = self.actors.get(actor.uid)
        if old is not None and old.status != "terminated":
            raise ValueError(f"{actor.uid} is still running")
        self.actors[actor.uid] = actor
        return actor

    def add_device(self, device):
        if device.cid in self.devices:
            raise ValueError(f"duplicate counter device {device.cid}")
        self.devices[device.cid] = device
        return device

    def fresh_id(self, prefix):
        """Unique random-ish instance id; sequential in exploration mode."""
        while True:
            if self.explore:
                uid = f"{prefix}{self._id_counter}"
                self._id_counter += 1
            else:
                uid = f"{prefix}{self.chooser.rng.getrandbits(24):06x}"
            if uid not in self.actors:
                return uid

    # -- nondeterminism ---------------------------------------------------

    def choose(self, n):
        return self.chooser.choose(n)

    def read_clock(self, reader):
        return self.clock.read(self, reader)

    # -- scheduling and the network --------------------------------------

    def schedule(self, at, target, payload):
        if at < self.now:
            raise SchedulingInPast(f"at={at} < now={self.now}")
        self.queue_push(at, target, payload)

    def queue_push(self, at, target, payload):
        heapq.heappush(self.queue, (at, self.seq, target, payload))
        self.seq += 1

    def send(self, sender, target, mtype, data=(), delay=None):
        """Route an authenticated message through the adversarial network."""
        if self.is_isolated(sender):
            self._net_note(f"drop:{mtype} {sender}->{target} (sender isolated)")
            return
        self.message_log.append((sender, target, mtype, data))
        extra, dropped = self._filter(sender, target, mtype)
        if dropped:
            self._net_note(f"drop:{mtype} {sender}->{target}")
            return
        d = self.message_delay if delay is None else delay
        if extra:
            self._net_note(f"delay:{mtype} {sender}->{target} +{extra}")
        self.schedule(self.now + d + extra,
                      target, ("deliver", sender, mtype) + tuple(data))

    def route(self, service):
        return self.routes[service]

    def _filter(self, sender, target, mtype):
        extra = 0
        for rule in self.drop_rules:
            s, t, m, nth, hits = rule
            if _match(s, sender) and _match(t, target) and _match(m, mtype):
                rule[4] = hits + 1
                if nth is None or rule[4] == nth:
                    return 0, True
        for rule in self.delay_rules:
            s, t, m, nth, ticks, hits = rule
            if _match(s, sender) and _match(t, target) and _match(m, mtype):
                rule[5] = hits + 1
                if nth is None or rule[5] == nth:
                    extra += ticks
        return extra, False

    def _net_note(self, text):
        if self.tracing:
            self.trace.append(self.now, "net", text)

    # -- adversary primitives --------------------------------------------

    def is_isolated(self, uid):
        until = self.isolated_until.get(uid)
        return until is not None and self.now < until

    def isolate(self, uid, until):
        self.isolated_until[uid] = max(until, self.isolated_until.get(uid, 0))

    def pause(self, uid, ticks):
        until = self.now + ticks
        self.pause_until[uid] = max(until, self.pause_until.get(uid, 0))

    def add_delay_rule(self, sender, target, mtype, nth, ticks):
        self.delay_rules.append([sender, target, mtype, nth, ticks, 0])

    def add_drop_rule(self, sender, target, mtype, nth):
        self.drop_rules.append([sender, target, mtype, nth, 0])

    def emit(self, kind, **fields):
        """Protocol-level observation hook consumed by monitors."""
        for m in self.monitors:
            m.on_emit(self, kind, fields)

    def record_counter_op(self, cid, caller, op, arg, result, latency,
                          ok=True, tag=""):
        if op == "cas" and ok:
            # modeled cost: every verified write is charged the configured
            # latency in the report, whether or not it delayed the schedule
            self.cost["counter_writes"] += 1
            self.cost["counter_write_ticks"] += self.params.get(
                "counter_write_latency", 40)
        if self.counter_op_log:
            self.counter_ops.append(CounterOpRecord(
                cid, caller, op, self.now, self.now + latency, arg, result,
                ok, tag))

    # -- the run loop -----------------------------------------------------

    def run_until(self, limit):
        """Process every event with at <= limit; quiescence is normal."""
        queue = self.queue
        while queue and queue[0][0] <= limit:
            entry = heapq.heappop(queue)
            self._dispatch(entry)
        if self.now < limit:
            self.now = limit
        return self.trace

    def step_specific(self, key, chooser):
        """Explorer hook: process exactly the queued event matching key."""
        for i, entry in enumerate(self.queue):
            if (entry[0], entry[1]) == key:
                self.queue.pop(i)
                break
        else:
            raise KeyError(f"no queued event {key}")
        heapq.heapify(self.queue)
        self.chooser = chooser
        self._dispatch(entry)

    def enabled_events(self):
        """All queued events sharing the earliest timestamp, seq order."""
        if not self.queue:
            return []
        t = min(e[0] for e in self.queue)
        return sorted(e for e in self.queue if e[0] == t)

    def _dispatch(self, entry):
        at, seq, uid, payload = entry
        self.now = at
        paused = self.pause_until.get(uid)
        if paused is not None and at < paused:
            # execution frozen: defer in arrival order to the resume tick
            self.queue_push(paused, uid, payload)
            self._note(at, uid, "paused-defer:" + payload[0])
            return
        if payload[0] == "deliver" and self.is_isolated(uid):
            self._note(at, uid, "drop-isolated:" + payload[2])
            return
        actor = self.actors.get(uid)
        if actor is None or actor.status == "terminated":
            self._note(at, uid, "drop-dead:" + payload[0])
            return
        if self.chooser is not None:
            del self.chooser.picks[:]
        actor.on_event(self, payload)
        desc = render_payload(payload)
        if self.chooser is not None and self.chooser.picks:
            desc += "&c=" + ",".join(map(str, self.chooser.picks))
        if self.tracing:
            dig = self.state_digest() if self.digesting else ""
            self.trace.append(at, uid, desc, dig)
        for m in self.monitors:
            m.after_event(self, at, uid, desc)

    def _note(self, at, uid, desc):
        if self.tracing:
            self.trace.append(at, uid, desc)
        for m in self.monitors:
            m.after_event(self, at, uid, desc)

    # -- snapshot / restore / digest -------------------------------------

    def snapshot(self):
        queue = sorted(self.queue)
        renumbered = tuple(
            (at, i, uid, payload) for i, (at, _, uid, payload) in enumerate(queue)
        )
        actors = tuple(
            (uid, a.kind_key, a.snap())
            for uid, a in sorted(self.actors.items())
        )
        devices = tuple(
            (cid, d.snap()) for cid, d in sorted(self.devices.items())
        )
        return (
            self.now,
            renumbered,
            actors,
            devices,
            self.clock.snap(),
            tuple(sorted(self.routes.items())),
            tuple(sorted(self.isolated_until.items())),
            tuple(sorted(self.pause_until.items())),
            tuple(tuple(r) for r in self.delay_rules),
            tuple(tuple(r) for r in self.drop_rules),
            tuple(sorted(self.node_disk.items())),
            tuple(sorted(self.disk_snapshots.items())),
            self._id_counter,
            self.last_spawn,
        )

    def restore(self, snap):
        (now, queue, actors, devices, clock, routes, isolated, paused,
         delays, drops, node_disk, disks, id_counter, last_spawn) = snap
        self.now = now
        self.queue = [tuple(e) for e in queue]
        heapq.heapify(self.queue)
        self.seq = len(queue)
        self.actors = {}
        for uid, kind_key, state in actors:
            self.actors[uid] = ACTOR_TYPES[kind_key].from_snap(uid, state)
        for cid, state in devices:
            self.devices[cid].restore(state)
        self.clock.restore(clock)
        self.routes = dict(routes)
        self.isolated_until = dict(isolated)
        self.pause_until = dict(paused)
        self.delay_rules = [list(r) for r in delays]
        self.drop_rules = [list(r) for r in drops]
        self.node_disk = dict(node_disk)
        self.disk_snapshots = dict(disks)
        self._id_counter = id_counter
        self.last_spawn = last_spawn

    def state_digest(self):
        return canon.digest(self.snapshot())


def _match(pattern, value):
    return pattern is None or pattern == value


def render_payload(payload):
    return payload[0] + ":" + ",".join(_short(x) for x in payload[1:])


def _short(x):
    if isinstance(x, bytes):
        return f"<{len(x)}B>"
    return str(x)


class Actor:
    """Base class: every actor is a sequential state machine owned by the
    engine; `snap`/`from_snap` must round-trip the full mutable state."""

    kind = "actor"
    kind_key = "actor"

    def __init__(self, uid):
        self.uid = uid
        self.status = "running"

    def on_event(self, world, payload):
        raise NotImplementedError

    def snap(self):
        raise NotImplementedError

    @classmethod
    def from_snap(cls, uid, state):
        raise NotImplementedError
