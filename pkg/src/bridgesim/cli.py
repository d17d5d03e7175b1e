"""
Command line entry point.

    bridgesim run <scenario>... [--trace PATH] [--seed N] [--until T] [--jobs N]
    bridgesim dump <scenario> --at T {fdb,topology,lsdb,bindings,links}
    bridgesim validate <scenario>...

A scenario is a JSON file path or a built-in name.  Exit status: 0 success,
1 assertion failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import scenario as scenario_mod
from .errors import ScenarioError
from .frames import FORMAT_VERSION
from .simnet.trace import Trace

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2
FORMAT_ENV = "BRIDGESIM_FORMAT_VERSION"


def _check_format():
    pinned = os.environ.get(FORMAT_ENV)
    if pinned is not None and pinned.strip() != str(FORMAT_VERSION):
        raise ScenarioError(FORMAT_ENV, f"format version {pinned!r} is not supported (have {FORMAT_VERSION})")


def _run_one(args):
    """Run one scenario; returns (exit code, output text).  Picklable for --jobs."""
    source, trace_path, seed, until = args
    try:
        scn = scenario_mod.load(source)
    except ScenarioError as exc:
        return EXIT_INVALID, f"invalid scenario: {exc}\n"
    trace = Trace()
    result = scenario_mod.run(scn, until=until, trace=trace, seed=seed)
    if trace_path:
        trace.write(trace_path)
    return (EXIT_OK if result.ok else EXIT_FAIL), "\n".join(result.report()) + "\n"


def _trace_target(path, source, many):
    if not path or not many:
        return path
    stem = os.path.splitext(os.path.basename(source))[0]
    return f"{path}.{stem}"


def cmd_run(ns, out):
    many = len(ns.scenarios) > 1
    jobs = [(s, _trace_target(ns.trace, s, many), ns.seed, ns.until) for s in ns.scenarios]
    if ns.jobs > 1 and many:
        with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for _, text in results:
        out.write(text)
    codes = [code for code, _ in results]
    if EXIT_INVALID in codes:
        return EXIT_INVALID
    return EXIT_FAIL if EXIT_FAIL in codes else EXIT_OK


def cmd_validate(ns, out):
    worst = EXIT_OK
    for source in ns.scenarios:
        try:
            scn = scenario_mod.load(source)
            out.write(f"valid {scn.name}\n")
        except ScenarioError as exc:
            out.write(f"invalid scenario: {exc}\n")
            worst = EXIT_INVALID
    return worst


def dump_state(scn, at, what):
    if scn.data.get("fuzz") is not None:
        from .experiments import run_fuzz
        net, _, _ = scenario_mod.build(scn)
        run_fuzz(net, scn.seed, scn.data["fuzz"]["operations"])
        net.run_until(max(at, net.sim.now))
    else:
        net, _, _ = scenario_mod.build(scn, timeline=scn.data.get("sweep") is None)
        net.run_until(at)
    lines = {"fdb": net.fdb_dump, "topology": net.topology_dump,
             "lsdb": net.lsdb_dump, "bindings": net.bindings_dump,
             "links": net.links_dump}[what]()
    return [f"# format={FORMAT_VERSION} scenario={scn.name} {what} t={at:g}"] + lines


def cmd_dump(ns, out):
    try:
        scn = scenario_mod.load(ns.scenario)
    except ScenarioError as exc:
        out.write(f"invalid scenario: {exc}\n")
        return EXIT_INVALID
    if ns.at < 0:
        out.write("invalid scenario: --at must be non-negative\n")
        return EXIT_INVALID
    out.write("\n".join(dump_state(scn, ns.at, ns.what)) + "\n")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def make_parser():
    p = _Parser(prog="bridgesim", description="Hybrid SPB/SDN bridged network simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run scenarios and check their assertions")
    r.add_argument("scenarios", nargs="+", metavar="scenario")
    r.add_argument("--trace", metavar="PATH")
    r.add_argument("--seed", type=int)
    r.add_argument("--until", type=float)
    r.add_argument("--jobs", type=int, default=1)
    d = sub.add_parser("dump", help="print state at a simulated time")
    d.add_argument("scenario")
    d.add_argument("--at", type=float, required=True)
    d.add_argument("what", choices=("fdb", "topology", "lsdb", "bindings", "links"))
    v = sub.add_parser("validate", help="check scenarios without running them")
    v.add_argument("scenarios", nargs="+", metavar="scenario")
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    ns = make_parser().parse_args(argv)
    try:
        _check_format()
    except ScenarioError as exc:
        out.write(f"{exc}\n")
        return EXIT_INVALID
    return {"run": cmd_run, "dump": cmd_dump, "validate": cmd_validate}[ns.command](ns, out)


if __name__ == "__main__":
    sys.exit(main())
