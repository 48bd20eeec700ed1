"""Scenario files: schema, validation, world construction, outcome checks.

A scenario is one JSON document that fully determines a run up to the
chooser: protocol parameters, the actor roster, genesis lease rows, an
optional adversary script, pinned clock-error scripts, and the expected
outcome. The same document drives both execution modes; `mode` only
selects the CLI default.

Outcome checks (`expect.checks`) are small declarative assertions about
the end state of a run, used by the attack-regression corpus: each
scenario states what its attack is supposed to (not) achieve, and a run
passes only when the invariant monitors stayed quiet in the expected way
AND every check holds.
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .adversary import ScriptedAdversary
from .election import Candidate, spawn_candidate
from .engine import CounterDevice, World
from .errors import ScenarioError
from .lease import LeaseServer, provision_server
from .monitors import standard_monitors
from .runtime import AppInstance, spawn_app, spawn_client
from .store import provision_store

DEFAULT_PARAMS = {
    "epsilon": 1,
    "period": 5,
    "lease_length": 5,
    "message_delay": 1,
    "counter_write_latency": 40,
    "slack": 4,
    "seed": 0,
    "limit": 60,
}

CHECK_KINDS = (
    "acks_only_from",
    "blocked_min",
    "commits_zero_window",
    "ext_after",
    "ext_some",
    "ext_zero",
    "ext_zero_prefix",
    "ext_zero_window",
    "leaders",
    "refused_prefix",
    "rollback_detected",
    "running",
    "server_survivors",
    "terminated",
    "terminated_prefix",
    "unavailable_min",
)

_CHECK_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": list(CHECK_KINDS)}},
}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["name"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "mode": {"enum": ["simulate", "explore"]},
        "parameters": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "integer", "minimum": 0},
                "period": {"type": "integer", "minimum": 1},
                "lease_length": {"type": "integer", "minimum": 1},
                "message_delay": {"type": "integer", "minimum": 0},
                "counter_write_latency": {"type": "integer", "minimum": 0},
                "slack": {"type": "integer", "minimum": 0},
                "max_instances": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "limit": {"type": "integer", "minimum": 1},
            },
        },
        "devices": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["cid"],
                "additionalProperties": False,
                "properties": {
                    "cid": {"type": "string", "minLength": 1},
                    "write_latency": {"type": "integer", "minimum": 0},
                    "read_latency": {"type": "integer", "minimum": 0},
                },
            },
        },
        "leases": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "minItems": 2,
                "maxItems": 2,
                "items": [{"type": "string"}, {"type": "integer"}],
            },
        },
        "store": {
            "type": "object",
            "required": ["replicas"],
            "additionalProperties": False,
            "properties": {
                "replicas": {"type": "integer", "minimum": 1, "maximum": 9},
                "check_period": {"type": "integer", "minimum": 1},
            },
        },
        "lease_servers": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "string", "minLength": 1},
        },
        "apps": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["uid", "app_id", "lease_id", "start"],
                "additionalProperties": False,
                "properties": {
                    "uid": {"type": "string", "minLength": 1},
                    "app_id": {"type": "string", "minLength": 1},
                    "lease_id": {"type": "string", "minLength": 1},
                    "start": {"type": "integer", "minimum": 0},
                    "workload": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "clients": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["uid", "service", "sends"],
                "additionalProperties": False,
                "properties": {
                    "uid": {"type": "string", "minLength": 1},
                    "service": {"type": "string", "minLength": 1},
                    "sends": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "elections": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["cid", "candidates"],
                "additionalProperties": False,
                "properties": {
                    "cid": {"type": "string", "minLength": 1},
                    "candidates": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["uid", "at"],
                            "additionalProperties": False,
                            "properties": {
                                "uid": {"type": "string", "minLength": 1},
                                "at": {"type": "integer", "minimum": 0},
                                "slack": {"type": "integer", "minimum": 0},
                            },
                        },
                    },
                },
            },
        },
        "clock_scripts": {
            "type": "object",
            "additionalProperties": {
                "oneOf": [
                    {"type": "integer"},
                    {"type": "array", "items": {"type": "integer"}},
                ],
            },
        },
        "adversary": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["at", "action"],
                "properties": {
                    "at": {"type": "integer", "minimum": 0},
                    "action": {"type": "string"},
                },
            },
        },
        "explore": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "depth": {"type": "integer", "minimum": 1},
                "horizon": {"type": ["integer", "null"], "minimum": 1},
                "final_checks": {"type": "array", "items": _CHECK_SCHEMA},
            },
        },
        "expect": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "outcome": {"enum": ["pass", "violation"]},
                "checks": {"type": "array", "items": _CHECK_SCHEMA},
            },
        },
    },
}


def parse_scenario(text, source="<string>"):
    """Parse and validate a scenario document from JSON text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(
            f"{source}: invalid JSON at line {e.lineno}, column {e.colno}: "
            f"{e.msg}", line=e.lineno, column=e.colno) from None
    validate_scenario(doc, source)
    return doc


def validate_scenario(doc, source="<scenario>"):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as e:
        field = "/".join(str(p) for p in e.absolute_path) or "(root)"
        raise ScenarioError(
            f"{source}: field {field}: {e.message}", field=field) from None
    # cross-field constraints the schema language cannot express
    cids = {d["cid"] for d in doc.get("devices", [])}
    for i, group in enumerate(doc.get("elections", [])):
        if group["cid"] not in cids:
            raise ScenarioError(
                f"{source}: elections/{i} names unknown device "
                f"{group['cid']!r}", field=f"elections/{i}/cid")
    cap = doc.get("parameters", {}).get("max_instances")
    if cap is not None:
        for i, group in enumerate(doc.get("elections", [])):
            if len(group["candidates"]) > cap:
                raise ScenarioError(
                    f"{source}: elections/{i} spawns "
                    f"{len(group['candidates'])} candidates, over the "
                    f"max_instances cap {cap}",
                    field=f"elections/{i}/candidates")
    needs_store = doc.get("lease_servers") or doc.get("apps")
    if needs_store and "store" not in doc:
        raise ScenarioError(
            f"{source}: lease servers and apps need a store section",
            field="store")
    if doc.get("apps") and not doc.get("lease_servers"):
        raise ScenarioError(
            f"{source}: apps need at least one lease server",
            field="lease_servers")
    for i, act in enumerate(doc.get("adversary", [])):
        normalize_action(act, i, source)
    return doc


def load_scenario(path):
    p = Path(path)
    return parse_scenario(p.read_text(), source=str(p))


_REQUIRED = object()  # sentinel: field must be present despite table position

_ACTION_FIELDS = {
    # kind -> (required fields, fields with defaults).  Value order in the
    # normalized tuple is table order; delay keeps its match fields first
    # to line up with drop/replay, so its required ticks rides at the end.
    "delay": ((),
              (("sender", None), ("target", None), ("mtype", None),
               ("nth", None), ("ticks", _REQUIRED))),
    "drop": ((),
             (("sender", None), ("target", None), ("mtype", None),
              ("nth", None))),
    "replay": ((),
               (("sender", None), ("target", None), ("mtype", None),
                ("nth", 1), ("extra", 0))),
    "isolate": ((("target", str), ("until", int)), ()),
    "pause": ((("target", str), ("ticks", int)), ()),
    "clone": ((("target", str),), ()),
    "terminate": ((("target", str),), ()),
    "snapshot_storage": ((("node", str), ("snapshot_id", str)), ()),
    "restore_storage": ((("node", str), ("snapshot_id", str)), ()),
    "reroute": ((("service", str), ("target", str)), ()),
    "recover": ((("node", str),), ()),
}


def normalize_action(obj, index=0, source="<scenario>"):
    """JSON action object -> normalized action tuple."""
    kind = obj["action"]
    spec = _ACTION_FIELDS.get(kind)
    if spec is None:
        raise ScenarioError(
            f"{source}: adversary/{index}: unknown action {kind!r}",
            field=f"adversary/{index}/action")
    required, optional = spec
    values = []
    for field, ftype in required:
        if field not in obj:
            raise ScenarioError(
                f"{source}: adversary/{index}: {kind} needs {field!r}",
                field=f"adversary/{index}/{field}")
        value = obj[field]
        if not isinstance(value, ftype) or isinstance(value, bool):
            raise ScenarioError(
                f"{source}: adversary/{index}: {field} must be "
                f"{ftype.__name__}", field=f"adversary/{index}/{field}")
        values.append(value)
    for field, default in optional:
        if default is _REQUIRED:
            if field not in obj:
                raise ScenarioError(
                    f"{source}: adversary/{index}: {kind} needs {field!r}",
                    field=f"adversary/{index}/{field}")
            value = obj[field]
            if not isinstance(value, int) or isinstance(value, bool):
                raise ScenarioError(
                    f"{source}: adversary/{index}: {field} must be int",
                    field=f"adversary/{index}/{field}")
            values.append(value)
        else:
            values.append(obj.get(field, default))
    known = {"at", "action"} | {f for f, _ in required} | \
        {f for f, _ in optional}
    for field in obj:
        if field not in known:
            raise ScenarioError(
                f"{source}: adversary/{index}: {kind} does not take "
                f"{field!r}", field=f"adversary/{index}/{field}")
    return (kind, *values)


# ---------------------------------------------------------------------------
# World construction


def build_world(doc, seed=None, explore=False, trace=False, digests=False,
                monitors=True):
    """Stand up a World from a (validated) scenario document.

    Validation is the loader's job: bulk simulation callers construct
    documents programmatically and skip re-validation on every run.
    """
    params = dict(DEFAULT_PARAMS)
    params.update(doc.get("parameters", {}))
    if seed is None:
        seed = params["seed"]
    world = World(params, seed=seed, explore=explore, trace=trace,
                  digests=digests, clock_scripts=doc.get("clock_scripts"))
    if monitors and not explore:
        world.monitors = standard_monitors(params)

    for d in doc.get("devices", []):
        world.add_device(CounterDevice(
            d["cid"], d.get("write_latency", 0), d.get("read_latency", 0)))

    genesis = {
        lid: (owner, expiry)
        for lid, (owner, expiry) in doc.get("leases", {}).items()
    }

    store_cfg = doc.get("store")
    if store_cfg:
        n = store_cfg["replicas"]
        uids = [f"r{i + 1}" for i in range(n)]
        devmap = {}
        for uid in uids:
            cid = "d" + uid
            world.add_device(CounterDevice(cid))
            devmap[uid] = cid
        provision_store(world, uids, uids[0], devmap, genesis,
                        store_cfg.get("check_period", params["period"]))
        world.routes["store"] = uids[0]

    for uid in doc.get("lease_servers", []):
        provision_server(world, uid, genesis)
    if doc.get("lease_servers"):
        world.routes["lease"] = doc["lease_servers"][0]

    for a in doc.get("apps", []):
        spawn_app(world, a["uid"], a["app_id"], a["lease_id"], a["start"],
                  a.get("workload"))

    for c in doc.get("clients", []):
        spawn_client(world, c["uid"], c["service"], c["sends"])

    for group in doc.get("elections", []):
        for c in group["candidates"]:
            spawn_candidate(world, c["uid"], group["cid"], c["at"],
                            slack=c.get("slack"))

    actions = doc.get("adversary", [])
    if actions:
        script = [(a["at"], normalize_action(a, i))
                  for i, a in enumerate(actions)]
        adv = ScriptedAdversary("adv", script)
        world.add_actor(adv)
        adv.arm(world)

    return world


def run_simulation(doc, seed=None, limit=None, trace=False, digests=False):
    """Build and run one seeded simulation; returns the world."""
    world = build_world(doc, seed=seed, trace=trace, digests=digests)
    if limit is None:
        limit = world.params["limit"]
    world.run_until(limit)
    return world


# ---------------------------------------------------------------------------
# Outcome checks


def _monitor(world, name):
    for m in world.monitors:
        if m.name == name:
            return m
    return None


def eval_checks(world, checks):
    """Evaluate declarative end-state checks; returns result rows."""
    results = []
    for check in checks or []:
        kind = check["kind"]
        fn = _CHECK_EVALUATORS[kind]
        ok, detail = fn(world, check)
        results.append({"kind": kind, "ok": bool(ok), "detail": detail})
    return results


def _actors_with_prefix(world, prefix, cls=None):
    return [a for uid, a in sorted(world.actors.items())
            if uid.startswith(prefix)
            and (cls is None or isinstance(a, cls))]


def _ext_count(world, uid):
    a = world.actors.get(uid)
    return getattr(a, "ext_count", 0) if a is not None else 0


def _ext_ticks(world, uid):
    m = _monitor(world, "activity")
    if m is None:
        return None
    return m.ext_ticks.get(uid, [])


def _activity_events(world, kind):
    m = _monitor(world, "activity")
    if m is None:
        return []
    return [e for e in m.events if e[1] == kind]


def _check_ext_zero_prefix(world, check):
    matches = _actors_with_prefix(world, check["prefix"], AppInstance)
    if not matches:
        return False, f"no app instance with prefix {check['prefix']!r}"
    bad = [a.uid for a in matches if a.ext_count]
    return not bad, f"matched {len(matches)}, externalized: {bad or 'none'}"


def _check_terminated_prefix(world, check):
    matches = _actors_with_prefix(world, check["prefix"])
    if not matches:
        return False, f"no actor with prefix {check['prefix']!r}"
    alive = [a.uid for a in matches if a.status != "terminated"]
    return not alive, f"matched {len(matches)}, still alive: {alive or 'none'}"


def _check_running(world, check):
    a = world.actors.get(check["uid"])
    if a is None:
        return False, "no such actor"
    if isinstance(a, AppInstance):
        return a.phase == "running", f"phase {a.phase}"
    return a.status == "running", f"status {a.status}"


def _check_terminated(world, check):
    a = world.actors.get(check["uid"])
    if a is None:
        return False, "no such actor"
    return a.status == "terminated", f"status {a.status}"


def _check_ext_zero(world, check):
    n = _ext_count(world, check["uid"])
    return n == 0, f"{n} externalizations"


def _check_ext_some(world, check):
    n = _ext_count(world, check["uid"])
    need = check.get("min", 1)
    return n >= need, f"{n} externalizations, needed >= {need}"


def _check_ext_after(world, check):
    ticks = _ext_ticks(world, check["uid"])
    if ticks is None:
        return False, "needs the activity monitor"
    n = sum(1 for t in ticks if t > check["tick"])
    need = check.get("min", 1)
    return n >= need, f"{n} externalizations after {check['tick']}"


def _check_ext_zero_window(world, check):
    ticks = _ext_ticks(world, check["uid"])
    if ticks is None:
        return False, "needs the activity monitor"
    lo, hi = check["from"], check["to"]
    inside = [t for t in ticks if lo <= t <= hi]
    return not inside, f"externalizations in [{lo},{hi}]: {inside or 'none'}"


def _check_acks_only_from(world, check):
    client = world.actors.get(check["client"])
    if client is None:
        return False, "no such client"
    senders = {s for _, s, _ in client.acks}
    need = check.get("min", 1)
    ok = senders <= {check["uid"]} and len(client.acks) >= need
    return ok, f"{len(client.acks)} acks from {sorted(senders) or 'nobody'}"


def _check_rollback_detected(world, check):
    m = _monitor(world, "store")
    if m is not None:
        n = len(m.rollbacks)
    else:
        n = sum(1 for a in world.actors.values() if a.status == "refused")
    need = check.get("min", 1)
    return n >= need, f"{n} rollback detections, needed >= {need}"


def _check_refused_prefix(world, check):
    matches = _actors_with_prefix(world, check["prefix"])
    refused = [a.uid for a in matches if a.status == "refused"]
    return bool(refused), f"refused: {refused or 'none'}"


def _check_server_survivors(world, check):
    alive = [uid for uid, a in sorted(world.actors.items())
             if isinstance(a, LeaseServer) and a.status != "terminated"]
    want = check["count"]
    return len(alive) == want, f"survivors {alive}, wanted {want}"


def _check_leaders(world, check):
    leading = [uid for uid, a in sorted(world.actors.items())
               if isinstance(a, Candidate) and a.cid == check["cid"]
               and a.phase == "leading"]
    want = check["count"]
    return len(leading) == want, f"leading {leading}, wanted {want}"


def _check_blocked_min(world, check):
    events = [e for e in _activity_events(world, "instance_blocked")
              if e[2].get("uid") == check["uid"]]
    need = check.get("min", 1)
    return len(events) >= need, f"{len(events)} blocked events"


def _check_unavailable_min(world, check):
    n = len(_activity_events(world, "store_unavailable"))
    need = check.get("min", 1)
    return n >= need, f"{n} unavailable responses, needed >= {need}"


def _check_commits_zero_window(world, check):
    m = _monitor(world, "store")
    if m is None:
        return False, "needs the store monitor"
    lo, hi = check["from"], check["to"]
    inside = [t for t, *_ in m.commits if lo <= t <= hi]
    return not inside, f"commits in [{lo},{hi}]: {inside or 'none'}"


_CHECK_EVALUATORS = {
    "acks_only_from": _check_acks_only_from,
    "blocked_min": _check_blocked_min,
    "commits_zero_window": _check_commits_zero_window,
    "ext_after": _check_ext_after,
    "ext_some": _check_ext_some,
    "ext_zero": _check_ext_zero,
    "ext_zero_prefix": _check_ext_zero_prefix,
    "ext_zero_window": _check_ext_zero_window,
    "leaders": _check_leaders,
    "refused_prefix": _check_refused_prefix,
    "rollback_detected": _check_rollback_detected,
    "running": _check_running,
    "server_survivors": _check_server_survivors,
    "terminated": _check_terminated,
    "terminated_prefix": _check_terminated_prefix,
    "unavailable_min": _check_unavailable_min,
}

assert set(_CHECK_EVALUATORS) == set(CHECK_KINDS)


# ---------------------------------------------------------------------------
# Built-in scenarios for the explorer CLI


def make_election_explore(epsilon=1, period=5, max_instances=3, slack=None):
    """The built-in election scenario the explore subcommand runs.

    Geometry: with the default wait the first candidate's earliest
    leadership entry is at `max(1, P + (s-2)*eps)`; its window renewals
    then land every P ticks. The challenger is spawned one tick after the
    renewal that a mutated (shorter) wait would leave exposed, and the
    incumbent is paused right there so its trusted reads can drift back
    down after the renewal's fast read. Safe at the default wait; the
    `P + 2*eps` mutation admits a schedule where both do work in one
    tick, which exploration finds.
    """
    if slack is None:
        slack = DEFAULT_PARAMS["slack"]
    challenger_at = max(1, period) + period + 1
    return {
        "name": "builtin_election",
        "description": "two candidates, one device, a pause-happy adversary",
        "mode": "explore",
        "parameters": {
            "epsilon": epsilon,
            "period": period,
            "slack": slack,
            "max_instances": max_instances,
            "message_delay": 1,
        },
        "devices": [{"cid": "mc1"}],
        "elections": [{
            "cid": "mc1",
            "candidates": [
                {"uid": "candA", "at": 0},
                {"uid": "candB", "at": challenger_at},
            ],
        }],
        "adversary": [
            {"at": challenger_at, "action": "pause", "target": "candA",
             "ticks": max(1, 2 * epsilon)},
            {"at": 1, "action": "delay", "target": "candA",
             "mtype": "lease_resp", "ticks": 1},
        ],
        "explore": {
            "depth": 100000,
            "horizon": 3 * period + 4 * epsilon + 6,
        },
    }


def make_micro_election(epsilon=1, period=3, depth=20):
    """Tiny two-candidate scenario for cross-checking the explorer
    against a brute-force enumeration of the same schedule space."""
    return {
        "name": "micro_election",
        "description": "two candidates, shallow bound, full enumeration",
        "mode": "explore",
        "parameters": {
            "epsilon": epsilon,
            "period": period,
            "slack": 2,
            "message_delay": 1,
        },
        "devices": [{"cid": "mc1"}],
        "elections": [{
            "cid": "mc1",
            "candidates": [
                {"uid": "candA", "at": 0},
                {"uid": "candB", "at": 2},
            ],
        }],
        "explore": {"depth": depth, "horizon": None},
    }


def scenarios_dir():
    return Path(__file__).parent / "scenarios"
