"""App runtime: the externalization gate, renewals, clones, transactions."""

from __future__ import annotations

from hypothesis import given, settings, strategies as st

from leaselab.monitors import all_violations, standard_monitors
from leaselab.runtime import spawn_app, spawn_client, spawn_clone

from conftest import Catcher, lease_world

EXACT = {"appA1": 0, "ls1": 0}  # pin both clocks to zero drift


def test_boot_grant_then_steady_externalization():
    w, px = lease_world({"slot": ("", 0)}, clock_scripts=EXACT)
    w.monitors.extend(standard_monitors(w.params))
    cat = Catcher()
    w.monitors.append(cat)
    a = spawn_app(w, "appA1", "appA", "slot", at=0)
    w.run_until(3)
    # nothing externalizes before the first grant lands
    assert a.phase == "starting"
    assert a.ext_count == 0
    w.run_until(10)
    assert a.phase == "running"
    assert a.view_expiry >= 11  # renewed past the first term already
    # the grant landed at 4 after that tick's gate check, so work starts at 5
    assert [t for t, _, _ in cat.of("externalize")] == [5, 6, 7, 8, 9, 10]
    for _, _, f in cat.of("externalize"):
        assert f["tau"] < f["expiry"]
    assert all_violations(w.monitors) == []


def test_scripted_workload_picks_the_work_ticks():
    w, px = lease_world({"slot": ("", 0)}, clock_scripts=EXACT)
    cat = Catcher()
    w.monitors.append(cat)
    a = spawn_app(w, "appA1", "appA", "slot", at=0, workload=(2, 5, 9))
    w.run_until(12)
    # offset 2 fell before the grant, offsets 5 and 9 ran
    assert [t for t, _, _ in cat.of("externalize")] == [5, 9]
    assert a.ext_count == 2


def test_stale_grant_never_shrinks_the_view():
    w, px = lease_world({"slot": ("", 0)})
    w.routes["lease"] = "px"  # swallow requests; feed responses by hand
    a = spawn_app(w, "appA1", "appA", "slot", at=0)
    for at, expiry in ((4, 20), (5, 12), (6, 25)):
        w.schedule(at, "appA1",
                   ("deliver", "ls1", "lease_resp", "slot", "granted", expiry))
    w.run_until(5)
    assert a.view_expiry == 20  # the late, smaller grant was ignored
    w.run_until(6)
    assert a.view_expiry == 25


def test_rejected_instance_terminates_for_good():
    w, px = lease_world({"slot": ("appX", 100)}, clock_scripts=EXACT)
    cat = Catcher()
    w.monitors.append(cat)
    a = spawn_app(w, "appA1", "appA", "slot", at=0)
    w.run_until(10)
    assert a.status == "terminated"
    assert a.ext_count == 0
    assert cat.of("instance_rejected") == [
        (2, "instance_rejected",
         {"uid": "appA1", "app_id": "appA", "ext_count": 0})]
    assert cat.of("externalize") == []


def test_expiry_blocks_until_the_server_answers_again():
    w, px = lease_world({"slot": ("", 0)}, clock_scripts=EXACT)
    w.monitors.extend(standard_monitors(w.params))
    cat = Catcher()
    w.monitors.append(cat)
    a = spawn_app(w, "appA1", "appA", "slot", at=0)
    w.run_until(3)
    w.isolate("ls1", 20)  # all renewals vanish from here on
    w.run_until(19)
    assert a.phase == "blocked"
    assert cat.of("instance_blocked") == [
        (8, "instance_blocked",
         {"uid": "appA1", "app_id": "appA", "tau": 8, "expiry": 8})]
    # worked ticks 5..7, then the gate held everything
    assert a.ext_count == 3
    w.run_until(26)
    assert a.phase == "running"
    assert a.view_expiry == 28  # retry at 20 carried stamp 20
    assert a.ext_count == 5  # resumed at 25
    assert all_violations(w.monitors) == []


def test_txns_are_acknowledged_only_from_work_ticks():
    w, px = lease_world({"slot": ("", 0)}, clock_scripts=EXACT)
    a = spawn_app(w, "appA1", "appA", "slot", at=0, workload=(5, 9))
    cl = spawn_client(w, "cl1", "app:appA", sends=(1, 5))
    w.run_until(12)
    # txn 0 arrived at 2 and waited for the first gated work tick; txn 1
    # arrived at 6 and waited for offset 9
    assert cl.acks == [(6, "appA1", 0), (10, "appA1", 1)]
    assert a.acked == 2
    assert a.ext_count == 2


def test_clone_uid_and_routing():
    w, px = lease_world({"slot": ("", 0)})
    spawn_app(w, "appA1", "appA", "slot", at=0)
    w.run_until(6)
    c = spawn_clone(w, "appA")
    assert c.uid.startswith("appax")
    assert c.lease_id == "slot"
    # the service route still points at the original
    assert w.routes["app:appA"] == "appA1"


def test_clone_of_a_live_holder_dies_invisibly():
    w, px = lease_world({"slot": ("", 0)}, clock_scripts=EXACT)
    w.monitors.extend(standard_monitors(w.params))
    cat = Catcher()
    w.monitors.append(cat)
    a = spawn_app(w, "appA1", "appA", "slot", at=0)
    w.run_until(10)
    clone = spawn_clone(w, "appA")
    w.run_until(30)
    assert clone.status == "terminated"
    assert clone.ext_count == 0
    assert [f["uid"] for _, _, f in cat.of("instance_rejected")] == [clone.uid]
    assert a.phase == "running"
    assert a.ext_count >= 20
    assert all_violations(w.monitors) == []


@settings(max_examples=20, deadline=None)
@given(
    length=st.integers(min_value=6, max_value=12),
    clone_at=st.integers(min_value=6, max_value=20),
    seed=st.integers(min_value=0, max_value=2**20),
)
def test_clone_races_never_leak_work(length, clone_at, seed):
    w, px = lease_world({"slot": ("", 0)},
                        params={"lease_length": length}, seed=seed)
    w.monitors.extend(standard_monitors(w.params))
    a = spawn_app(w, "appA1", "appA", "slot", at=0)
    w.run_until(clone_at)
    clone = spawn_clone(w, "appA")
    w.run_until(60)
    assert clone.ext_count == 0
    assert clone.status == "terminated"
    assert all_violations(w.monitors) == []
