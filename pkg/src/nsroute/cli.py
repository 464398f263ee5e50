"""Command-line driver.

Subcommands::

    nsroute run --topology T --workload W [--fault-plan F] [--seed N]
                [--timeout-t T] [--interval2 I] --out DIR
    nsroute similarity --topology T (--networks n1,n2 | --servers n1:s1,s2)
    nsroute log-scan LOG --now TICKS [--timeout-t T]
    nsroute replay --out DIR

Exit codes: 0 success, 1 usage, 2 invalid input, 3 every job rejected at
submission, 4 some job unschedulable/incomplete (run), missing links found
(log-scan) or replay divergence (replay).
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .catalog import (
    format_ratio,
    load_topology,
    network_app_set,
    server_app_set,
    similarity_networks,
    similarity_servers,
)
from .dispatch import load_workload
from .errors import NsRouteError
from .failover import ActiveEntry, find_missing_links, parse_log, serialize_log
from .sim import FaultPlan, Params, Simulation, load_fault_plan

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_ALL_REJECTED = 3
EXIT_INCOMPLETE = 4

OUTPUT_FILES = ("trace.txt", "metrics.txt", "log.txt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


@dataclass
class RunConfig:
    topology_path: Path
    workload_path: Path
    out_dir: Path
    fault_plan_path: Optional[Path] = None
    seed: Optional[int] = None
    timeout_t: int = 1000
    interval_2: int = 250


def _read(path: Path, what: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise NsRouteError(f"cannot read {what} {path}: {exc.strerror}") from None


def _execute(topo: bytes, work: bytes, plan_doc: Optional[bytes], seed: Optional[int],
             timeout_t: int, interval_2: int, out_dir: Path):
    nsmap = load_topology(topo)
    jobs = load_workload(work)
    plan = load_fault_plan(plan_doc) if plan_doc is not None else FaultPlan()
    if seed is not None:
        plan = FaultPlan(plan.crashes, plan.frame_drop_rate, seed)
    params = Params(timeout_t=timeout_t, interval_2=interval_2)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim = Simulation(nsmap, jobs, plan, params, out_root=out_dir)
    metrics = sim.run()
    (out_dir / "trace.txt").write_text("\n".join(metrics.trace) + "\n", encoding="utf-8")
    (out_dir / "metrics.txt").write_text(metrics.to_text(), encoding="utf-8")
    (out_dir / "log.txt").write_bytes(serialize_log(sim.monitor.log))
    return metrics


def cmd_run(config: RunConfig) -> int:
    try:
        if config.timeout_t <= 0 or config.interval_2 <= 0:
            raise NsRouteError("--timeout-t and --interval2 must be positive")
        if config.seed is not None and not 0 <= config.seed < 2**64:
            raise NsRouteError("--seed must be a 64-bit unsigned integer")
        topo = _read(config.topology_path, "topology")
        work = _read(config.workload_path, "workload")
        plan_doc = _read(config.fault_plan_path, "fault plan") if config.fault_plan_path else None
        out = Path(config.out_dir)
        metrics = _execute(topo, work, plan_doc, config.seed, config.timeout_t,
                           config.interval_2, out)
        inputs = out / "inputs"
        inputs.mkdir(exist_ok=True)
        (inputs / "topology.json").write_bytes(topo)
        (inputs / "workload.json").write_bytes(work)
        if plan_doc is not None:
            (inputs / "fault_plan.json").write_bytes(plan_doc)
        (inputs / "run.json").write_text(json.dumps(
            {"seed": config.seed, "timeout_t": config.timeout_t, "interval_2": config.interval_2},
            sort_keys=True) + "\n", encoding="utf-8")
    except (NsRouteError, OSError) as exc:
        print(f"nsroute run: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"submitted={metrics.jobs_submitted} completed={metrics.jobs_completed} "
          f"unschedulable={metrics.jobs_unschedulable} failovers={metrics.failovers}")
    if metrics.jobs_submitted and metrics.unschedulable_at_submission == metrics.jobs_submitted:
        return EXIT_ALL_REJECTED
    if metrics.jobs_completed < metrics.jobs_submitted:
        return EXIT_INCOMPLETE
    return EXIT_OK


def cmd_similarity(topology_path, networks: Optional[str] = None,
                   servers: Optional[str] = None) -> int:
    try:
        nsmap = load_topology(_read(topology_path, "topology"))
        if networks is not None:
            ids = networks.split(",")
            if len(ids) != 2:
                raise UsageError("--networks expects exactly two ids: n1,n2")
            ratio = similarity_networks(network_app_set(nsmap, ids[0]), network_app_set(nsmap, ids[1]))
        else:
            net, sep, rest = servers.partition(":")
            ids = rest.split(",")
            if not sep or len(ids) != 2:
                raise UsageError("--servers expects net:s1,s2")
            ratio = similarity_servers(server_app_set(nsmap, net, ids[0]),
                                       server_app_set(nsmap, net, ids[1]))
    except UsageError as exc:
        print(f"nsroute similarity: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NsRouteError as exc:
        print(f"nsroute similarity: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{format_ratio(ratio)} {float(ratio):.6f}")
    return EXIT_OK


def cmd_log_scan(log_path, now: int, timeout_t: int) -> int:
    try:
        log = parse_log(_read(log_path, "log"))
        if timeout_t <= 0:
            raise NsRouteError("--timeout-t must be positive")
    except NsRouteError as exc:
        print(f"nsroute log-scan: {exc}", file=sys.stderr)
        return EXIT_INVALID
    active = [ActiveEntry(f"row{i}", rec) for i, rec in enumerate(log, start=1)]
    missing, _ = find_missing_links(active, now, timeout_t)
    for m in missing:
        r = m.record
        print(f"MISSING {r.external_ip} {r.app} {r.internal_ip} {r.n_files_received}/{r.n_files_expected}")
    return EXIT_INCOMPLETE if missing else EXIT_OK


def cmd_replay(out_dir) -> int:
    """Re-run the scenario recorded in ``out_dir`` and compare its outputs."""
    out = Path(out_dir)
    inputs = out / "inputs"
    try:
        run = json.loads(_read(inputs / "run.json", "run record"))
        topo = _read(inputs / "topology.json", "topology")
        work = _read(inputs / "workload.json", "workload")
        plan_path = inputs / "fault_plan.json"
        plan_doc = plan_path.read_bytes() if plan_path.exists() else None
        with tempfile.TemporaryDirectory() as tmp:
            _execute(topo, work, plan_doc, run["seed"], run["timeout_t"], run["interval_2"], Path(tmp))
            diverged = [name for name in OUTPUT_FILES
                        if _read(out / name, name) != (Path(tmp) / name).read_bytes()]
    except (NsRouteError, OSError, KeyError, ValueError) as exc:
        print(f"nsroute replay: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for name in diverged:
        print(f"DIVERGED {name}")
    if not diverged:
        print("IDENTICAL " + " ".join(OUTPUT_FILES))
    return EXIT_INCOMPLETE if diverged else EXIT_OK


def _u64(text):
    try:
        return int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nsroute", description="Similarity-routed cloud dispatch simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario to quiescence")
    run.add_argument("--topology", required=True, type=Path)
    run.add_argument("--workload", required=True, type=Path)
    run.add_argument("--fault-plan", type=Path)
    run.add_argument("--seed", type=_u64)
    run.add_argument("--timeout-t", type=int, default=1000)
    run.add_argument("--interval2", type=int, default=250)
    run.add_argument("--out", required=True, type=Path)

    sim = sub.add_parser("similarity", help="catalog similarity of two networks or servers")
    sim.add_argument("--topology", required=True, type=Path)
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--networks")
    group.add_argument("--servers")

    scan = sub.add_parser("log-scan", help="list missing links in a log file")
    scan.add_argument("log", type=Path)
    scan.add_argument("--now", type=int, required=True)
    scan.add_argument("--timeout-t", type=int, default=1000)

    replay = sub.add_parser("replay", help="re-run a recorded scenario and compare outputs")
    replay.add_argument("--out", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(RunConfig(
            topology_path=args.topology, workload_path=args.workload, out_dir=args.out,
            fault_plan_path=args.fault_plan, seed=args.seed,
            timeout_t=args.timeout_t, interval_2=args.interval2,
        ))
    if args.command == "similarity":
        return cmd_similarity(args.topology, args.networks, args.servers)
    if args.command == "log-scan":
        return cmd_log_scan(args.log, args.now, args.timeout_t)
    return cmd_replay(args.out)


if __name__ == "__main__":
    sys.exit(main())
