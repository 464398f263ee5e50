"""Deterministic discrete-event harness.

Events are ordered by ``(time, seq)``; ``seq`` is a global counter assigned at
scheduling time, so two runs from the same inputs fire the same events in the
same order and produce byte-identical traces. All randomness (frame drops)
comes from one :class:`~nsroute.hashing.XorShift64Star` seeded from the fault
plan.

Per job the loop runs: arrival -> dispatch -> JOB frame to the server ->
execution -> result frame back to the interface -> storage, release and an
update queued for propagation. Monitor ticks fire every ``interval_2`` ticks
and additionally at each attempt's deadline (``dispatched_at + timeout_t``).
"""

from __future__ import annotations

import heapq
import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .catalog import NsMap, load_topology, topology_to_dict
from .dispatch import (
    AccessFrequencyTable,
    JobRequest,
    ReplicaStore,
    TransmissionQueue,
    dispatch,
    load_workload,
    propagate_inter,
    propagate_intra,
    queue_order_violations,
    related_networks,
)
from .errors import ConfigError, ExecutorFailure, NoCapacity, ProtocolError
from .failover import Abandoned, Deferred, LogRecord, Monitor, Reassigned, monitor_tick, next_tick
from .hashing import XorShift64Star, fnv1a_64
from .protocol import (
    JobEnvelope,
    StatusLine,
    decode_job,
    decode_results,
    encode_job,
    op_send,
    release_server,
    run_job,
    stub_execute,
    store_outputs,
)

ARRIVAL = "arrival"
FRAME_DELIVERY = "frame_delivery"
EXECUTOR_DONE = "executor_done"
MONITOR_TICK = "monitor_tick"
CRASH = "crash"
HEAL = "heal"

TRACE_VERSION = "nsroute-trace/1"


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: str = field(compare=False)
    data: dict = field(compare=False, default_factory=dict)


class _Quiescent:
    def __repr__(self):
        return "Quiescent"

    def __bool__(self):
        return False


Quiescent = _Quiescent()


@dataclass(frozen=True)
class Crash:
    network: str
    server: str
    time: int
    heal_time: Optional[int] = None


@dataclass
class FaultPlan:
    crashes: list = field(default_factory=list)
    frame_drop_rate: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.frame_drop_rate < 1.0:
            raise ConfigError(f"frame_drop_rate must be in [0, 1), got {self.frame_drop_rate}")
        if not isinstance(self.rng_seed, int) or not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must be a 64-bit unsigned integer")
        self.crashes = [c if isinstance(c, Crash) else Crash(*c) for c in self.crashes]


def load_fault_plan(data) -> FaultPlan:
    """JSON: ``{"crashes": [{"network", "server", "time", "heal_time"?}],
    "frame_drop_rate": float, "rng_seed": int}``; every key optional."""
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"fault plan: {exc}") from None
    if not isinstance(doc, dict) or set(doc) - {"crashes", "frame_drop_rate", "rng_seed"}:
        raise ConfigError("fault plan: expected an object with crashes/frame_drop_rate/rng_seed")
    crashes = []
    for c in doc.get("crashes", []):
        if not isinstance(c, dict) or set(c) - {"network", "server", "time", "heal_time"} \
                or not {"network", "server", "time"} <= set(c):
            raise ConfigError(f"fault plan: bad crash entry {c!r}")
        crashes.append(Crash(c["network"], c["server"], c["time"], c.get("heal_time")))
    return FaultPlan(crashes, float(doc.get("frame_drop_rate", 0.0)), doc.get("rng_seed", 0))


@dataclass
class Params:
    timeout_t: int = 1000
    interval_2: int = 250
    hop_latency: int = 1
    exec_ticks: int = 10
    max_ticks: int = 10_000_000

    def __post_init__(self):
        for name in ("timeout_t", "interval_2", "hop_latency", "exec_ticks", "max_ticks"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")


@dataclass
class JobOutcome:
    job_id: str
    arrival: int
    completed_at: Optional[int] = None
    attempts: int = 0
    status: str = "pending"


@dataclass
class Metrics:
    jobs_submitted: int = 0
    jobs_completed: int = 0
    jobs_unschedulable: int = 0
    unschedulable_at_submission: int = 0
    failovers: int = 0
    frames_sent: int = 0
    frames_dropped: int = 0
    propagation_rounds: int = 0
    queue_order_violations: int = 0
    conservation_violations: int = 0
    completion_times: list = field(default_factory=list)
    jobs: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    _COUNTERS = ("jobs_submitted", "jobs_completed", "jobs_unschedulable",
                 "unschedulable_at_submission", "failovers", "frames_sent",
                 "frames_dropped", "propagation_rounds", "queue_order_violations",
                 "conservation_violations")

    @property
    def jobs_incomplete(self) -> int:
        return self.jobs_submitted - self.jobs_completed - self.jobs_unschedulable

    def to_text(self) -> str:
        lines = [f"{k}={getattr(self, k)}" for k in self._COUNTERS]
        lines.append(f"jobs_incomplete={self.jobs_incomplete}")
        lines.append("")
        lines.append("job_id,arrival,completed_at,latency,attempts,status")
        for o in self.jobs.values():
            done = "" if o.completed_at is None else str(o.completed_at)
            lat = "" if o.completed_at is None else str(o.completed_at - o.arrival)
            lines.append(f"{o.job_id},{o.arrival},{done},{lat},{o.attempts},{o.status}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ConsistencyReport:
    consistent: bool
    server: Optional[str] = None
    detail: str = ""

    def __bool__(self):
        return self.consistent


def _trace_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    return str(v)


class Simulation:
    """One scenario run. Mutates ``nsmap`` in place."""

    def __init__(self, nsmap: NsMap, jobs, plan: Optional[FaultPlan] = None,
                 params: Optional[Params] = None, executor=stub_execute,
                 out_root=None):
        self.nsmap = nsmap
        self.jobs = list(jobs)
        self.plan = plan or FaultPlan()
        self.params = params or Params()
        self.executor = executor
        self.out_root = Path(out_root) if out_root is not None else None

        self.clock = 0
        self._seq = 0
        self._queue: list = []
        self._pending_kinds: Counter = Counter()
        self.rng = XorShift64Star(self.plan.rng_seed)
        self.metrics = Metrics()

        self.table = AccessFrequencyTable()
        self.tx_queue = TransmissionQueue()
        self.replicas = ReplicaStore()
        self.propagated: dict = {}
        self.pop_sequences: list = []
        self.monitor = Monitor()

        self.attempt: dict = {}        # job_id -> (attempt no, network, server)
        self.records: dict = {}        # job_id -> LogRecord of the current attempt
        self.updates: dict = {}        # job_id -> UpdateMessage awaiting completion
        self.scratch: dict = {}        # (network, server) -> {job_id: files}
        self.crashed: set = set()      # (network, server) down per the fault plan
        self.stored: dict = {}         # (external_ip, name) -> bytes
        self.stored_by_job: dict = {}  # job_id -> [(external_ip, name)]
        self.finished: set = set()
        self._periodic_at: Optional[int] = None

        self.metrics.trace.append(self.trace_header())
        for req in self.jobs:
            self.metrics.jobs[req.job_id] = JobOutcome(req.job_id, req.arrival_time)
            self.schedule_at(req.arrival_time, ARRIVAL, job=req.job_id)
        self._requests = {r.job_id: r for r in self.jobs}
        if len(self._requests) != len(self.jobs):
            raise ConfigError("duplicate job ids in workload")
        self.metrics.jobs_submitted = len(self.jobs)
        inject_faults(self, self.plan)
        if self.jobs:
            self._ensure_periodic(self.jobs[0].arrival_time)

    # -- event queue ---------------------------------------------------------

    def trace_header(self) -> str:
        topo = json.dumps(topology_to_dict(self.nsmap), sort_keys=True).encode()
        p = self.params
        return (f"# {TRACE_VERSION} topology={fnv1a_64(topo):016x} rng={XorShift64Star.name} "
                f"seed={self.plan.rng_seed} drop_rate={self.plan.frame_drop_rate!r} "
                f"timeout_t={p.timeout_t} interval_2={p.interval_2} hop={p.hop_latency} "
                f"exec={p.exec_ticks} jobs={len(self.jobs)}")

    def schedule(self, event: Event) -> Event:
        """Queue ``event``; a time in the past is clamped to now and flagged."""
        if event.time < self.clock:
            event.data["late"] = True
            event.time = self.clock
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, event)
        self._pending_kinds[event.kind] += 1
        return event

    def schedule_at(self, time: int, kind: str, **data) -> Event:
        return self.schedule(Event(time, 0, kind, data))

    def step(self):
        """Fire the earliest event; return it, or ``Quiescent`` if none remain."""
        if not self._queue:
            return Quiescent
        ev = heapq.heappop(self._queue)
        self._pending_kinds[ev.kind] -= 1
        self.clock = ev.time
        notes = getattr(self, "_on_" + ev.kind)(ev) or {}
        fields = {k: v for k, v in ev.data.items() if k != "frame"}
        fields.update(notes)
        extra = "".join(f" {k}={_trace_value(v)}" for k, v in fields.items())
        self.metrics.trace.append(f"t={ev.time} seq={ev.seq} kind={ev.kind}{extra}")
        if not self._conserved():
            self.metrics.conservation_violations += 1
        return ev

    def run(self) -> Metrics:
        while self._queue and self._queue[0].time <= self.params.max_ticks:
            self.step()
        for o in self.metrics.jobs.values():
            if o.status == "pending":
                o.status = "incomplete"
        return self.metrics

    # -- helpers -------------------------------------------------------------

    def _server_ip(self, net: str, srv: str) -> str:
        return self.nsmap.server(net, srv).internal_ip

    def _send(self, time: int, direction: str, job_id: str, attempt: int,
              net: str, srv: str, frame: bytes) -> None:
        self.metrics.frames_sent += 1
        dropped = self.rng.random() < self.plan.frame_drop_rate
        if dropped:
            self.metrics.frames_dropped += 1
        self.schedule_at(time, FRAME_DELIVERY, to=direction, job=job_id, attempt=attempt,
                         net=net, srv=srv, bytes=len(frame), dropped=dropped, frame=frame)

    def _start_attempt(self, req: JobRequest, net: str, srv: str) -> None:
        n, _, _ = self.attempt.get(req.job_id, (0, None, None))
        n += 1
        self.attempt[req.job_id] = (n, net, srv)
        self.metrics.jobs[req.job_id].attempts = n
        env = JobEnvelope(req.job_id, req.external_ip, req.app, net, srv, req.n_files, req.payload)
        self._send(self.clock + self.params.hop_latency, "server", req.job_id, n, net, srv,
                   encode_job(env))
        self.schedule_at(self.clock + self.params.timeout_t, MONITOR_TICK, reason="deadline",
                         job=req.job_id)

    def _work_remaining(self) -> bool:
        others = sum(c for k, c in self._pending_kinds.items() if k != MONITOR_TICK)
        return bool(others or self.monitor.active or self.monitor.deferred or len(self.tx_queue))

    def _ensure_periodic(self, now: int) -> None:
        if self._periodic_at is None or self._periodic_at < now:
            self._periodic_at = next_tick(now, self.params.interval_2)
            self.schedule_at(self._periodic_at, MONITOR_TICK, reason="periodic")

    def _conserved(self) -> bool:
        load = sum(s.current_load for _, s in self.nsmap.iter_servers())
        in_flight = sum(1 for e in self.monitor.active if not e.record.complete)
        return load == in_flight

    def _finish(self, job_id: str, status: str) -> None:
        self.finished.add(job_id)
        self.metrics.jobs[job_id].status = status

    # -- handlers ------------------------------------------------------------

    def _on_arrival(self, ev: Event):
        req = self._requests[ev.data["job"]]
        try:
            decision, update = dispatch(self.nsmap, req, self.table)
        except NoCapacity:
            self.metrics.jobs_unschedulable += 1
            self.metrics.unschedulable_at_submission += 1
            self._finish(req.job_id, "unschedulable")
            return {"result": "no_capacity"}
        self.monitor.requests[req.job_id] = req
        record = LogRecord(req.external_ip, req.app, self._server_ip(decision.network, decision.server),
                           req.n_files, 0, self.clock)
        self.monitor.track(req.job_id, record)
        self.records[req.job_id] = record
        self.updates[req.job_id] = update
        self._start_attempt(req, decision.network, decision.server)
        self._ensure_periodic(self.clock)
        return {"net": decision.network, "srv": decision.server,
                "score": f"{decision.score.numerator}/{decision.score.denominator}"}

    def _on_frame_delivery(self, ev: Event):
        d = ev.data
        if d["dropped"]:
            return None
        if d["to"] == "server":
            key = (d["net"], d["srv"])
            if key in self.crashed:
                return {"result": "server_down"}
            try:
                env = decode_job(d["frame"])
                run_job(env, self.executor, self.scratch.setdefault(key, {}))
            except (ExecutorFailure, ProtocolError) as exc:
                return {"result": type(exc).__name__}
            self.schedule_at(self.clock + self.params.exec_ticks, EXECUTOR_DONE,
                             job=d["job"], attempt=d["attempt"], net=d["net"], srv=d["srv"])
            return {"result": "accepted"}
        return self._op_receive(d)

    def _on_executor_done(self, ev: Event):
        d = ev.data
        key = (d["net"], d["srv"])
        scratch = self.scratch.get(key, {})
        if key in self.crashed or d["job"] not in scratch:
            return {"result": "lost"}
        req = self._requests[d["job"]]
        frame = op_send(scratch, d["job"], StatusLine(req.app, d["net"], d["srv"]))
        self._send(self.clock + self.params.hop_latency, "interface", d["job"], d["attempt"],
                   d["net"], d["srv"], frame)
        return None

    def _op_receive(self, d: dict):
        job_id = d["job"]
        current = self.attempt.get(job_id, (None,))[0]
        if job_id in self.finished or d["attempt"] != current:
            return {"result": "stale"}
        req = self._requests[job_id]
        files, status = decode_results(d["frame"])
        if self.out_root is not None:
            store_outputs(self.out_root, req.external_ip, files)
        for f in files:
            self.stored[(req.external_ip, f.name)] = f.content
        self.stored_by_job[job_id] = [(req.external_ip, f.name) for f in files]
        self.records[job_id].n_files_received = len(files)
        release_server(self.nsmap, status)
        self.metrics.jobs_completed += 1
        self.metrics.completion_times.append(self.clock)
        self.metrics.jobs[job_id].completed_at = self.clock
        self._finish(job_id, "completed")
        update = replace(self.updates.pop(job_id), serving_network=status.network,
                         serving_server=status.server)
        self.tx_queue.push(update)
        return {"result": "stored", "files": len(files)}

    def _on_monitor_tick(self, ev: Event):
        periodic = ev.data.get("reason") == "periodic"
        if periodic:
            self._periodic_at = None
        down = {self._server_ip(n, s) for n, s in self.crashed}
        notes = {}
        for action in monitor_tick(self.monitor, self.nsmap, self.clock, self.params.timeout_t, down):
            if isinstance(action, Reassigned):
                self.metrics.failovers += 1
                failed = self.nsmap.locate(action.previous.record.internal_ip)
                if failed not in self.crashed:
                    # alive but silent (lost frame): re-admit after a probe round trip
                    self.schedule_at(self.clock + 2 * self.params.hop_latency, HEAL,
                                     net=failed[0], srv=failed[1], probe=True)
                req = self._requests[action.job_id]
                self.records[action.job_id] = self.monitor.entry(action.job_id).record
                self._start_attempt(req, action.decision.network, action.decision.server)
                notes.setdefault("reassigned", []).append(
                    f"{action.job_id}:{failed[0]}/{failed[1]}->{action.decision.network}/{action.decision.server}")
            elif isinstance(action, Abandoned):
                self.metrics.jobs_unschedulable += 1
                self._finish(action.job_id, "unschedulable")
                notes.setdefault("abandoned", []).append(action.job_id)
            elif isinstance(action, Deferred):
                notes.setdefault("deferred", []).append(action.job_id)
        self._drain_updates()
        if self._work_remaining():
            self._ensure_periodic(self.clock)
        return {k: ",".join(v) for k, v in notes.items()}

    def _drain_updates(self) -> None:
        if not len(self.tx_queue):
            return
        popped = list(self.tx_queue.drain())
        self.pop_sequences.append(popped)
        self.metrics.queue_order_violations += queue_order_violations(popped)
        self.metrics.propagation_rounds += 1
        for u in popped:
            propagate_intra(self.nsmap, u.serving_network, u, self.replicas)
            propagate_inter(self.nsmap, u.serving_network, u, self.replicas)
            self.propagated[u.job_id] = u

    def _on_crash(self, ev: Event):
        key = (ev.data["net"], ev.data["srv"])
        self.crashed.add(key)
        self.nsmap.server(*key).active = False
        self.scratch.pop(key, None)
        return None

    def _on_heal(self, ev: Event):
        key = (ev.data["net"], ev.data["srv"])
        if ev.data.get("probe") and key in self.crashed:
            return {"result": "still_down"}
        self.crashed.discard(key)
        self.nsmap.server(*key).active = True
        return None


def inject_faults(sim: Simulation, plan: FaultPlan) -> Simulation:
    """Schedule crash/heal events of ``plan`` and reseed the drop generator."""
    for c in plan.crashes:
        sim.nsmap.server(c.network, c.server)  # raises UnknownServer
        sim.schedule_at(c.time, CRASH, net=c.network, srv=c.server)
        if c.heal_time is not None:
            if c.heal_time < c.time:
                raise ConfigError(f"heal_time before crash time for {c.network}:{c.server}")
            sim.schedule_at(c.heal_time, HEAL, net=c.network, srv=c.server)
    if plan is not sim.plan:
        sim.plan = plan
        sim.rng = XorShift64Star(plan.rng_seed)
    return sim


def run_scenario(topology, workload, plan: Optional[FaultPlan] = None,
                 params: Optional[Params] = None, out_root=None) -> Metrics:
    """Build a :class:`Simulation` from documents (or parsed values) and run it."""
    try:
        nsmap = topology if isinstance(topology, NsMap) else load_topology(topology)
        jobs = workload if isinstance(workload, list) else load_workload(workload)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    return Simulation(nsmap, jobs, plan, params, out_root=out_root).run()


def synthetic_workload(n_jobs: int, apps, seed: int = 0, spacing: int = 5,
                       users: int = 50, max_files: int = 4) -> list:
    """``n_jobs`` requests arriving every ``spacing`` ticks from 10.20.x.y clients."""
    rng = random.Random(seed)
    apps = list(apps)
    return [
        JobRequest(
            job_id=f"j{i}",
            user_id=f"u{rng.randrange(users)}",
            external_ip=f"10.20.{rng.randrange(4)}.{rng.randrange(1, 255)}",
            app=rng.choice(apps),
            payload=f"run {i}".encode(),
            n_files=rng.randint(1, max_files),
            arrival_time=i * spacing,
        )
        for i in range(n_jobs)
    ]


def replica_consistency(sim: Simulation) -> ConsistencyReport:
    """Every propagated update sits on exactly the servers of its origin
    network and that network's related networks, and every replica's
    frequency table agrees with the updates it holds."""
    nsmap = sim.nsmap
    holders: dict = {}
    for u in sim.propagated.values():
        nets = {u.serving_network} | related_networks(nsmap, u.serving_network)
        holders[u.job_id] = nets
    for net in nsmap.networks:
        for srv in net.servers:
            name = f"{net.id}:{srv.id}"
            rep = sim.replicas.get((net.id, srv.id))
            held = rep.updates if rep else {}
            for job_id, nets in holders.items():
                if net.id in nets and job_id not in held:
                    return ConsistencyReport(False, name, f"missing update {job_id}")
            for job_id, u in held.items():
                if job_id not in holders or net.id not in holders[job_id]:
                    return ConsistencyReport(False, name, f"unexpected update {job_id}")
                if u != sim.propagated[job_id]:
                    return ConsistencyReport(False, name, f"update {job_id} differs from origin copy")
            if rep is not None:
                expect = Counter(u.app for u in held.values())
                if dict(expect) != rep.table.counts or rep.table.total != sum(expect.values()):
                    return ConsistencyReport(False, name, "frequency table disagrees with update history")
    return ConsistencyReport(True)
