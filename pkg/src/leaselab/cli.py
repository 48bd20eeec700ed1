"""Command line entry points.

Three subcommands:

``run``      execute one scenario file under its declared expectation and
             report invariant, check, and cost results.  Exit 0 when the
             expectation is met, 2 when it is not.
``corpus``   run every scenario in a directory (the bundled attack corpus
             by default); exit 0 only if all expectations are met.
``explore``  exhaustively explore interleavings of the built-in election
             scenario, or of a scenario file carrying an ``explore``
             section.  Exit 0 safe, 1 violation, 3 depth bound hit.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from .errors import ScenarioError
from .explorer import (
    BOUND_EXHAUSTED,
    SAFE,
    VIOLATION,
    explore_scenario,
    replay_counterexample,
)
from .monitors import all_violations
from .scenario import (
    eval_checks,
    make_election_explore,
    parse_scenario,
    run_simulation,
    scenarios_dir,
    validate_scenario,
)

# Every invariant the monitors can flag, in report order.
INVARIANT_NAMES = (
    "single_leader",
    "lease_exclusivity",
    "externalize_gate",
    "externalize_then_lost",
    "counter_nondecrease",
    "single_winner",
    "write_budget",
    "quorum_gate",
    "committed_reads",
)

MUTATIONS = {
    "wait=P+2eps": 2,
    "wait=P+4eps": 4,
}


def load_scenario(path):
    text = Path(path).read_text()
    doc = parse_scenario(text, source=str(path))
    validate_scenario(doc, source=str(path))
    return doc


def run_report(doc, seed=None, limit=None, trace=False):
    """Run one scenario and assemble the full result report."""
    t0 = time.monotonic()
    world = run_simulation(doc, seed=seed, limit=limit, trace=trace)
    elapsed = time.monotonic() - t0

    violations = all_violations(world.monitors)
    first = {}
    for name, tick, detail in violations:
        first.setdefault(name, (tick, detail))
    invariants = {}
    for name in INVARIANT_NAMES:
        tick, detail = first.get(name, (None, None))
        invariants[name] = {"ok": name not in first, "tick": tick,
                            "detail": detail}

    expect = doc.get("expect", {})
    expected = expect.get("outcome", "pass")
    checks = eval_checks(world, expect.get("checks"))
    checks_ok = all(c["ok"] for c in checks)
    if expected == "pass":
        met = not violations and checks_ok
    else:
        met = bool(violations) and checks_ok

    ext = {}
    for uid, actor in sorted(world.actors.items()):
        n = getattr(actor, "ext_count", 0)
        if n:
            ext[uid] = n

    return {
        "scenario": doc.get("name", "<unnamed>"),
        "seed": world.seed,
        "limit": limit if limit is not None else world.params["limit"],
        "expected": expected,
        "met": met,
        "invariants": invariants,
        "checks": checks,
        "externalized": ext,
        "cost": dict(world.cost),
        "elapsed_s": round(elapsed, 3),
        "trace": world.trace.export_lines() if trace else None,
    }


def print_report(report, out=sys.stdout):
    w = out.write
    w("scenario:  %s\n" % report["scenario"])
    w("seed:      %s   limit: %s   elapsed: %ss\n"
      % (report["seed"], report["limit"], report["elapsed_s"]))
    w("expected:  %s   ->   %s\n"
      % (report["expected"], "met" if report["met"] else "NOT MET"))
    w("invariants:\n")
    for name in INVARIANT_NAMES:
        row = report["invariants"][name]
        if row["ok"]:
            w("  %-22s ok\n" % name)
        else:
            w("  %-22s VIOLATED at tick %s  (%s)\n"
              % (name, row["tick"], row["detail"]))
    if report["checks"]:
        w("checks:\n")
        for c in report["checks"]:
            mark = "ok" if c["ok"] else "FAIL"
            w("  %-22s %-4s %s\n" % (c["kind"], mark, c["detail"]))
    cost = report["cost"]
    w("cost:      %d counter writes, %d modeled latency ticks\n"
      % (cost.get("counter_writes", 0), cost.get("counter_write_ticks", 0)))
    if report["externalized"]:
        parts = ", ".join("%s=%d" % kv
                          for kv in sorted(report["externalized"].items()))
        w("externalized: %s\n" % parts)


def cmd_run(args):
    try:
        doc = load_scenario(args.scenario)
    except ScenarioError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    report = run_report(doc, seed=args.seed, limit=args.limit,
                        trace=bool(args.trace_out))
    if args.trace_out:
        Path(args.trace_out).write_text("\n".join(report["trace"]) + "\n")
    payload = dict(report)
    payload.pop("trace", None)
    if args.json:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        print_report(payload)
    return 0 if report["met"] else 2


def cmd_corpus(args):
    directory = Path(args.directory) if args.directory else scenarios_dir()
    files = sorted(directory.glob("*.json"))
    if not files:
        print("error: no scenario files in %s" % directory, file=sys.stderr)
        return 2
    rows = []
    all_met = True
    for path in files:
        try:
            doc = load_scenario(path)
            report = run_report(doc, seed=args.seed)
        except ScenarioError as exc:
            rows.append({"scenario": path.name, "met": False,
                         "error": str(exc)})
            all_met = False
            continue
        rows.append({"scenario": report["scenario"], "met": report["met"],
                     "expected": report["expected"],
                     "elapsed_s": report["elapsed_s"]})
        all_met = all_met and report["met"]
        if not report["met"] and not args.json:
            print_report(report)
    if args.json:
        json.dump({"directory": str(directory), "all_met": all_met,
                   "results": rows}, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        for row in rows:
            mark = "ok " if row["met"] else "FAIL"
            extra = row.get("error", "")
            print("%s  %-28s %s" % (mark, row["scenario"], extra))
        print("corpus: %d scenarios, %s"
              % (len(rows), "all met" if all_met else "EXPECTATION FAILED"))
    return 0 if all_met else 2


def cmd_explore(args):
    if args.scenario:
        try:
            doc = load_scenario(args.scenario)
        except ScenarioError as exc:
            print("error: %s" % exc, file=sys.stderr)
            return 2
        if "explore" not in doc:
            print("error: scenario has no explore section", file=sys.stderr)
            return 2
    else:
        slack = MUTATIONS[args.mutate] if args.mutate else None
        doc = make_election_explore(epsilon=args.epsilon, period=args.period,
                                    max_instances=args.max_instances,
                                    slack=slack)
    t0 = time.monotonic()
    result = explore_scenario(doc, depth=args.depth, horizon=args.horizon)
    elapsed = time.monotonic() - t0

    stats = result.stats()
    stats["elapsed_s"] = round(elapsed, 3)
    if args.json:
        json.dump(stats, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        print("outcome:     %s" % result.outcome)
        print("states:      %d" % result.states)
        print("transitions: %d" % result.transitions)
        print("max depth:   %d" % result.max_depth)
        print("elapsed:     %.1fs" % elapsed)
        if result.violation:
            print("violation:   %s (%s, tick %s)"
                  % (result.violation["kind"], result.violation["detail"],
                     result.violation["tick"]))
            print("path length: %d steps" % len(result.path))
    if result.outcome == VIOLATION and args.trace_out:
        world = replay_counterexample(doc, result.path)
        world.trace.write(args.trace_out)
        if not args.json:
            print("counterexample trace written to %s" % args.trace_out)
    if result.outcome == SAFE:
        return 0
    if result.outcome == VIOLATION:
        return 1
    return 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="leaselab",
        description="Deterministic lease protocol laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--limit", type=int, default=None)
    p_run.add_argument("--trace-out", default=None)
    p_run.add_argument("--json", action="store_true")
    p_run.set_defaults(fn=cmd_run)

    p_corpus = sub.add_parser("corpus", help="run a scenario directory")
    p_corpus.add_argument("directory", nargs="?", default=None)
    p_corpus.add_argument("--seed", type=int, default=None)
    p_corpus.add_argument("--json", action="store_true")
    p_corpus.set_defaults(fn=cmd_corpus)

    p_explore = sub.add_parser(
        "explore", help="exhaustively explore schedules")
    p_explore.add_argument("--scenario", default=None,
                           help="scenario file with an explore section "
                                "(default: built-in election scenario)")
    p_explore.add_argument("--epsilon", type=int, default=1)
    p_explore.add_argument("--period", type=int, default=5)
    p_explore.add_argument("--max-instances", type=int, default=3)
    p_explore.add_argument("--depth", type=int, default=None,
                           help="override the scenario's depth bound")
    p_explore.add_argument("--horizon", type=int, default=None)
    p_explore.add_argument("--mutate", choices=sorted(MUTATIONS),
                           default=None,
                           help="weaken or restore the candidate wait rule")
    p_explore.add_argument("--trace-out", default=None,
                           help="write a replayed counterexample trace here")
    p_explore.add_argument("--json", action="store_true")
    p_explore.set_defaults(fn=cmd_explore)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
