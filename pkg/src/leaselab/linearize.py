"""Linearizability check for counter-device histories.

Classic interval-order search: an operation may be linearized first only
if no other unlinearized operation finished before it started, and only
if the sequential counter semantics accept its recorded result. The
search memoizes on (remaining-operation set, device value), which keeps
the tiny histories produced by election and store runs cheap to verify.

This is the independent oracle for the device's read/conditional-write
contract: the engine linearizes at invocation by construction, and this
checker re-derives the existence of a legal sequential order from the
recorded invoke/respond intervals alone.
"""

from __future__ import annotations

from .engine import CounterValue


def _step(state, rec):
    """Apply one recorded op to the sequential device state, or return
    None when the recorded result is impossible at this point."""
    if rec.op == "read":
        return state if rec.result == state else None
    expected, proposed = rec.arg
    if rec.ok:
        return proposed if state == expected else None
    # a failed conditional increment reports the value it lost to
    if state != expected and rec.result == state:
        return state
    return None


def is_linearizable(history, initial=CounterValue(0, "")):
    """history: CounterOpRecords for one device, any order."""
    recs = sorted(history, key=lambda r: (r.invoke, r.respond))
    n = len(recs)
    if n == 0:
        return True
    full = (1 << n) - 1
    memo = set()

    def search(remaining, state):
        if remaining == 0:
            return True
        key = (remaining, state)
        if key in memo:
            return False
        min_respond = min(
            recs[i].respond for i in range(n) if remaining >> i & 1)
        for i in range(n):
            if not remaining >> i & 1:
                continue
            if recs[i].invoke > min_respond:
                continue  # some finished op must come first
            nxt = _step(state, recs[i])
            if nxt is not None and search(remaining & ~(1 << i), nxt):
                return True
        memo.add(key)
        return False

    return search(full, initial)


def check_history(counter_ops):
    """Group a run's op log per device; return the devices that fail."""
    per_device = {}
    for rec in counter_ops:
        per_device.setdefault(rec.cid, []).append(rec)
    return [cid for cid, ops in sorted(per_device.items())
            if not is_linearizable(ops)]
