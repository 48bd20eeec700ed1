"""Counter-arbitrated single-node leader election.

A candidate reads its counter device, tries one conditional increment to
`(count+1, self)`, and on success waits until its trusted clock has
advanced at least `P + slack*eps` past the timestamp it took when the
write was acknowledged. Only then does it start doing work. A losing
write (stale) terminates the candidate: the one-write budget is what
keeps an unbounded candidate population from churning the device.

While leading, each tick of work is gated by a fresh trusted read `tau`:

* `tau <  window_end` - do one unit of work this tick,
* `tau >= window_end` - skip work, re-read the device instead; if the
  holder is still us the window extends to `tau + P` (work may resume
  this same tick, reusing `tau`), otherwise terminate immediately.

Why `slack = 4` is the safe default, in engine ticks: suppose a new
candidate's increment lands at tick `cw`. The displaced leader's last
possible window renewal read happened at a tick `<= cw` with value
`<= cw + eps`, so its window ends by `cw + eps + P` and its last work
tick is at most `cw + P + 2*eps - 1` (a fresh read at tick T is at
least `T - eps`). The new leader acknowledged at tick `cw`, so its
baseline timestamp is at least `cw - eps`, and a wait of `P + 4*eps`
trusted time puts its first work tick at `cw + P + 2*eps` or later:
one tick after the old leader's last. With `slack = 2` the same bound
leaves a `2*eps`-tick overlap, which the schedule explorer can reach.
"""

from __future__ import annotations

from .engine import Actor, CounterValue, register_actor
from .errors import DeviceUnavailable

RETRY_BACKOFF = 1  # ticks between device retries while isolated

PHASES = ("reading", "writing", "waiting", "leading", "terminated")


@register_actor
class Candidate(Actor):
    kind = "app_instance"
    kind_key = "candidate"

    def __init__(self, uid, cid, period, epsilon, slack=4, parent=None):
        super().__init__(uid)
        self.cid = cid
        self.period = period
        self.epsilon = epsilon
        self.slack = slack
        self.parent = parent  # optional actor notified on lead/displace
        self.phase = "reading"
        self.observed = None  # CounterValue seen by the read
        self.claimed = None   # CounterValue this candidate wrote
        self.ack_tt = None    # trusted stamp taken when the write acked
        self.window_end = None
        self.work_tick = None
        self.work_count = 0
        self.elect_writes = 0

    # The wait threshold in trusted-clock ticks.
    def wait_span(self):
        return self.period + self.slack * self.epsilon

    def on_event(self, world, payload):
        tag = payload[0]
        if tag == "start" or tag == "retry":
            self._read_device(world)
        elif tag == "mc_resp":
            self._on_device(world, payload)
        elif tag == "poll":
            self._poll_wait(world)
        elif tag == "lead":
            self._lead_tick(world)

    def _read_device(self, world, tag="elect"):
        try:
            world.devices[self.cid].read(world, self.uid, tag=tag)
        except DeviceUnavailable:
            world.schedule(world.now + RETRY_BACKOFF, self.uid, ("retry",))

    def _on_device(self, world, payload):
        _, cid, op, tag, *rest = payload
        if op == "read" and tag == "elect":
            count, holder = rest
            self.observed = CounterValue(count, holder)
            self.phase = "writing"
            proposed = CounterValue(count + 1, self.uid)
            try:
                world.devices[cid].cond_increment(
                    world, self.uid, self.observed, proposed, tag="elect")
                self.elect_writes += 1
            except DeviceUnavailable:
                self.phase = "reading"
                world.schedule(world.now + RETRY_BACKOFF, self.uid, ("retry",))
        elif op == "cas" and tag == "elect":
            status, count, holder = rest
            if status != "ok":
                # someone else moved the device first; election is over
                self._terminate(world, "lost")
                return
            self.claimed = CounterValue(count, holder)
            self.ack_tt = world.read_clock(self.uid)
            self.phase = "waiting"
            # earliest tick at which a fresh read could clear the wait
            head_start = max(1, self.wait_span() - 2 * self.epsilon)
            world.schedule(world.now + head_start, self.uid, ("poll",))
        elif op == "read" and tag == "check":
            count, holder = rest
            # the count may legitimately advance under our own service
            # writes; leadership is about who holds the device
            if holder == self.uid:
                self.window_end = self.pending_check_tt + self.period
                # the triggering read is only fresh if the device answered
                # within the same tick; otherwise wait for the next cycle
                if world.now == self.pending_check_tick:
                    self._work_unit(world, self.pending_check_tt)
                world.schedule(world.now + 1, self.uid, ("lead",))
            else:
                self._terminate(world, "displaced")

    def _poll_wait(self, world):
        tau = world.read_clock(self.uid)
        if tau - self.ack_tt >= self.wait_span():
            self.phase = "leading"
            self.window_end = tau + self.period
            if self.parent is not None:
                world.schedule(world.now, self.parent, ("elected", self.uid))
            self._work_unit(world, tau)
            world.schedule(world.now + 1, self.uid, ("lead",))
        else:
            world.schedule(world.now + 1, self.uid, ("poll",))

    def _lead_tick(self, world):
        tau = world.read_clock(self.uid)
        if tau < self.window_end:
            self._work_unit(world, tau)
            world.schedule(world.now + 1, self.uid, ("lead",))
        else:
            self.pending_check_tt = tau
            self.pending_check_tick = world.now
            self._read_device(world, tag="check")
            # on an isolated device the retry path re-reads; leadership is
            # not reasserted until the check answers, so no work either way

    def _work_unit(self, world, tau):
        assert tau < self.window_end
        self.work_tick = world.now
        self.work_count += 1

    def _terminate(self, world, why):
        self.phase = "terminated"
        self.status = "terminated"
        if self.parent is not None:
            world.schedule(world.now, self.parent, ("displaced", self.uid, why))

    def is_doing_work(self, world):
        return self.phase == "leading" and self.work_tick == world.now

    # retry events for an isolated device may arrive in the "check" flow
    # after termination; the engine drops events to terminated actors.

    def describe(self):
        return f"candidate({self.uid}, {self.phase})"

    def snap(self):
        return (
            self.cid, self.period, self.epsilon, self.slack, self.parent,
            self.phase, self.status, self.observed, self.claimed, self.ack_tt,
            self.window_end, getattr(self, "pending_check_tt", None),
            getattr(self, "pending_check_tick", None),
            self.work_tick, self.work_count, self.elect_writes,
        )

    @classmethod
    def from_snap(cls, uid, state):
        (cid, period, epsilon, slack, parent, phase, status, observed,
         claimed, ack_tt, window_end, pending, pending_tick, work_tick,
         work_count, writes) = state
        c = cls(uid, cid, period, epsilon, slack, parent)
        c.phase = phase
        c.status = status
        c.observed = None if observed is None else CounterValue(*observed)
        c.claimed = None if claimed is None else CounterValue(*claimed)
        c.ack_tt = ack_tt
        c.window_end = window_end
        if pending is not None:
            c.pending_check_tt = pending
        if pending_tick is not None:
            c.pending_check_tick = pending_tick
        c.work_tick = work_tick
        c.work_count = work_count
        c.elect_writes = writes
        return c


def spawn_candidate(world, uid, cid, at, slack=None, parent=None):
    params = world.params
    c = Candidate(
        uid, cid,
        period=params.get("period", 5),
        epsilon=params.get("epsilon", 1),
        slack=params.get("slack", 4) if slack is None else slack,
        parent=parent,
    )
    world.add_actor(c)
    world.schedule(at, uid, ("start",))
    return c
