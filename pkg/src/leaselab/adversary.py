"""Adversary action set: what a privileged-but-keyless attacker can do.

Actions are normalized tuples, validated before they take effect:

    ("delay", sender, target, mtype, nth, ticks)
    ("drop", sender, target, mtype, nth)
    ("replay", sender, target, mtype, nth, extra_delay)
    ("isolate", actor, until_tick)
    ("pause", actor, ticks)
    ("clone", app_id_or_actor_uid)
    ("terminate", actor)
    ("snapshot_storage", node, snapshot_id)
    ("restore_storage", node, snapshot_id)
    ("reroute", service, actor)
    ("recover", node)

Match fields (sender/target/mtype) may be None for wildcards; nth picks
the n-th matching message (1-based), None means every match. Messages
are authenticated: the adversary can hold them back, discard them, or
re-deliver byte-identical copies it has already seen on the wire, but it
cannot mint one, and nothing here can move a counter device backwards -
there is no such action, and asking for one is refused outright.
"""

from __future__ import annotations

from .errors import ForbiddenAction
from . import runtime as runtime_mod
from . import store as store_mod
from .engine import Actor, register_actor
from .lease import LeaseServer

KINDS = {
    "delay", "drop", "replay", "isolate", "pause", "clone",
    "terminate", "snapshot_storage", "restore_storage", "reroute",
    "recover",
}


def validate(world, action):
    kind = action[0]
    if kind not in KINDS:
        raise ForbiddenAction(f"unknown or forbidden action {kind!r}")
    return action


def apply_action(world, action):
    validate(world, action)
    kind = action[0]
    if kind == "delay":
        _, sender, target, mtype, nth, ticks = action
        world.add_delay_rule(sender, target, mtype, nth, ticks)
    elif kind == "drop":
        _, sender, target, mtype, nth = action
        world.add_drop_rule(sender, target, mtype, nth)
    elif kind == "replay":
        _, sender, target, mtype, nth, extra = action
        _replay(world, sender, target, mtype, nth, extra)
    elif kind == "isolate":
        _, actor, until = action
        world.isolate(actor, until)
    elif kind == "pause":
        _, actor, ticks = action
        world.pause(actor, ticks)
    elif kind == "clone":
        _clone(world, action[1])
    elif kind == "terminate":
        actor = world.actors.get(action[1])
        if actor is not None:
            actor.status = "terminated"
            if hasattr(actor, "serving"):
                actor.serving = False
            world.emit("terminated", uid=action[1])
    elif kind == "snapshot_storage":
        _, node, sid = action
        if node not in world.node_disk:
            raise ForbiddenAction(f"no storage at node {node}")
        world.disk_snapshots[sid] = world.node_disk[node]
    elif kind == "restore_storage":
        _, node, sid = action
        if sid not in world.disk_snapshots:
            raise ForbiddenAction(f"no storage snapshot {sid}")
        world.node_disk[node] = world.disk_snapshots[sid]
    elif kind == "reroute":
        _, service, to = action
        if to == "$last_clone":
            # scripted scenarios cannot know a generated clone uid ahead
            # of time; this names whatever the latest clone action made
            if world.last_spawn is None:
                raise ForbiddenAction("no clone to reroute to")
            to = world.last_spawn
        world.routes[service] = to
    elif kind == "recover":
        r = store_mod.spawn_replica_process(world, action[1])
        world.last_spawn = r.uid


def inject(world, action):
    """Apply an adversary action right now; scripted scenarios wrap this
    in an adversary actor so the action takes effect at its tick."""
    return apply_action(world, action)


def _replay(world, sender, target, mtype, nth, extra):
    """Re-deliver a previously observed authenticated message. Without a
    matching observation this would be forgery, which is refused."""
    hits = 0
    for s, t, m, data in world.message_log:
        if ((sender is None or s == sender)
                and (target is None or t == target)
                and (mtype is None or m == mtype)):
            hits += 1
            if nth is None or hits == nth:
                world.schedule(world.now + max(extra, 0), t,
                               ("deliver", s, m) + tuple(data))
                world._net_note(f"replay:{m} {s}->{t}")
                return
    raise ForbiddenAction(
        f"no observed message matches ({sender},{target},{mtype},{nth})")


def _clone(world, ident):
    actor = world.actors.get(ident)
    if actor is None:
        # not an actor uid: treat as an app service id
        world.last_spawn = runtime_mod.spawn_clone(world, ident).uid
        return
    if isinstance(actor, store_mod.Replica):
        world.last_spawn = store_mod.spawn_replica_process(
            world, actor.home).uid
    elif isinstance(actor, LeaseServer):
        uid = world.fresh_id(ident + "c")
        clone = LeaseServer(uid, actor.lease_length, actor.epsilon,
                            actor.period)
        world.add_actor(clone)
        # a fresh server instance has no soft state: it loads its cache
        # from the committed store before serving
        load_id = f"{uid}.boot"
        clone.busy = True
        clone.inflight = (load_id, None, None, None, None)
        world.send(uid, world.route("store"), "s_load", (load_id,))
        world.last_spawn = uid
    elif isinstance(actor, runtime_mod.AppInstance):
        world.last_spawn = runtime_mod.spawn_clone(world, actor.app_id).uid
    else:
        raise ForbiddenAction(f"cannot clone {ident}")


@register_actor
class ScriptedAdversary(Actor):
    """Replays a fixed action script at its scheduled ticks."""

    kind = "adversary"
    kind_key = "adversary"

    def __init__(self, uid, script):
        super().__init__(uid)
        # script: tuple of (tick, action_tuple)
        self.script = tuple((t, tuple(a)) for t, a in script)

    def arm(self, world):
        for i, (tick, _) in enumerate(self.script):
            world.schedule(tick, self.uid, ("act", i))

    def on_event(self, world, payload):
        if payload[0] == "act":
            tick, action = self.script[payload[1]]
            apply_action(world, action)

    def snap(self):
        return (self.status, self.script)

    @classmethod
    def from_snap(cls, uid, state):
        status, script = state
        a = cls(uid, script)
        a.status = status
        return a
