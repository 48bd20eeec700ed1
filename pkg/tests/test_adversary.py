"""Adversary actions: the allowed set, validation, and refusals."""

from __future__ import annotations

import pytest

from leaselab.adversary import ScriptedAdversary, apply_action
from leaselab.errors import ForbiddenAction
from leaselab.runtime import spawn_app

from conftest import Catcher, lease_world, probe_send, store_world


def test_unknown_kinds_are_refused():
    w, px = store_world()
    for bad in ("forge", "decrement_counter", "steal_key", ""):
        with pytest.raises(ForbiddenAction):
            apply_action(w, (bad, "r1"))


def test_delay_drop_isolate_pause_wire_into_the_world():
    w, px = store_world()
    apply_action(w, ("delay", "a", "b", "m", 2, 7))
    apply_action(w, ("drop", None, "b", None, None))
    apply_action(w, ("isolate", "r1", 9))
    apply_action(w, ("pause", "px", 4))
    assert w.delay_rules == [["a", "b", "m", 2, 7, 0]]
    assert w.drop_rules == [[None, "b", None, None, 0]]
    assert w.isolated_until["r1"] == 9
    assert w.pause_until["px"] == 4


def test_replay_redelivers_but_conditionals_defang_it():
    w, px = store_world()
    probe_send(w, 0, "store", "s_write", ("w1", "slot", "appA", 20, None, None))
    w.run_until(5)
    apply_action(w, ("replay", "px", "r1", "s_write", 1, 0))
    w.run_until(8)
    # the byte-identical write really arrived again; its expect-no-row
    # condition now fails against the row it created the first time
    assert px.of("s_write_resp") == [
        (2, "s_write_resp", ("w1", "ok", "slot", "appA", 20)),
        (6, "s_write_resp", ("w1", "conflict", "slot", "appA", 20)),
    ]
    assert w.actors["r1"].log == [("slot", "appA", 20)]


def test_replay_without_an_observation_is_forgery():
    w, px = store_world()
    w.run_until(3)
    with pytest.raises(ForbiddenAction):
        apply_action(w, ("replay", None, None, "lease_resp", None, 0))


def test_terminate_action_downs_an_actor():
    w, px = store_world()
    cat = Catcher()
    w.monitors.append(cat)
    w.run_until(2)
    apply_action(w, ("terminate", "r1"))
    assert w.actors["r1"].status == "terminated"
    assert w.actors["r1"].serving is False
    assert cat.of("terminated") == [(2, "terminated", {"uid": "r1"})]
    # terminating a uid that never existed is a silent no-op
    apply_action(w, ("terminate", "ghost"))


def test_storage_snapshot_and_restore_round_trip():
    w, px = store_world()
    probe_send(w, 0, "w:", "s_write", ("w1", "a", "appA", 9, None, None))
    apply_action(w, ("snapshot_storage", "r1", "s0"))
    blob = w.node_disk["r1"]
    probe_send(w, 1, "store", "s_write", ("w2", "b", "appB", 9, None, None))
    w.run_until(4)
    assert w.node_disk["r1"] != blob
    apply_action(w, ("restore_storage", "r1", "s0"))
    assert w.node_disk["r1"] == blob
    with pytest.raises(ForbiddenAction):
        apply_action(w, ("snapshot_storage", "nowhere", "s1"))
    with pytest.raises(ForbiddenAction):
        apply_action(w, ("restore_storage", "r1", "never-taken"))


def test_terminate_then_recover_restarts_the_leader():
    w, px = store_world()
    cat = Catcher()
    w.monitors.append(cat)
    probe_send(w, 0, "store", "s_write", ("w1", "a", "appA", 9, None, None))
    w.run_until(4)
    apply_action(w, ("terminate", "r1"))
    apply_action(w, ("recover", "r1"))
    w.run_until(12)
    assert cat.of("replica_recovered") == [
        (9, "replica_recovered", {"uid": "r1", "home": "r1", "tick": 9})]
    # the restart kept the node identity, so it serves again
    probe_send(w, 13, "store", "s_write", ("w2", "b", "appB", 9, None, None))
    w.run_until(17)
    assert px.of("s_write_resp")[-1][2][1] == "ok"


def test_clone_replica_displaces_the_running_process():
    w, px = store_world()
    cat = Catcher()
    w.monitors.append(cat)
    w.run_until(5)
    apply_action(w, ("clone", "r1"))
    clone_uid = w.last_spawn
    assert clone_uid.startswith("r1c")
    w.run_until(20)
    assert cat.of("replica_down") == [
        (10, "replica_down", {"uid": "r1", "why": "displaced"})]
    assert [f["uid"] for _, _, f in cat.of("replica_recovered")] == [clone_uid]
    assert w.actors[clone_uid].serving


def test_clone_app_by_service_id_or_instance_uid():
    w, px = lease_world({"slot": ("", 0)})
    spawn_app(w, "appA1", "appA", "slot", at=0)
    w.run_until(6)
    apply_action(w, ("clone", "appA"))
    first = w.last_spawn
    apply_action(w, ("clone", "appA1"))
    second = w.last_spawn
    assert first != second
    assert first.startswith("appax") and second.startswith("appax")
    assert w.actors[second].lease_id == "slot"


def test_clone_lease_server_loads_cache_before_serving():
    w, px = lease_world({"slot": ("appA", 6)})
    # move the store past the server's cached view
    probe_send(w, 0, "store", "s_write", ("w1", "slot", "appB", 30, "appA", 6))
    w.run_until(4)
    apply_action(w, ("clone", "ls1"))
    clone_uid = w.last_spawn
    assert clone_uid.startswith("ls1c")
    w.run_until(8)
    clone = w.actors[clone_uid]
    assert clone.cache == {"slot": ("appB", 30)}
    assert w.actors["ls1"].cache == {"slot": ("appA", 6)}  # still stale
    probe_send(w, 9, clone_uid, "lease_req", ("slot", "appB", 11))
    w.run_until(14)
    assert px.of("lease_resp")[-1][2] == ("slot", "granted", 19)


def test_unclonable_targets_are_refused():
    w, px = store_world()
    with pytest.raises(ForbiddenAction):
        apply_action(w, ("clone", "px"))  # a test probe is not a service


def test_reroute_needs_a_clone_for_the_placeholder():
    w, px = lease_world({"slot": ("", 0)})
    with pytest.raises(ForbiddenAction):
        apply_action(w, ("reroute", "lease", "$last_clone"))
    apply_action(w, ("reroute", "lease", "px"))
    assert w.routes["lease"] == "px"
    apply_action(w, ("clone", "ls1"))
    apply_action(w, ("reroute", "lease", "$last_clone"))
    assert w.routes["lease"] == w.last_spawn


def test_scripted_adversary_fires_at_its_ticks():
    w, px = store_world()
    adv = ScriptedAdversary("adv", [
        (3, ("isolate", "px", 7)),
        (5, ("drop", None, None, "probe", None)),
    ])
    w.add_actor(adv)
    adv.arm(w)
    w.run_until(4)
    assert w.isolated_until["px"] == 7
    assert w.drop_rules == []
    w.run_until(6)
    assert w.drop_rules == [[None, None, "probe", None, 0]]
