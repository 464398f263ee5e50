"""Monitoring log, missing-link detection, and emergency load shift.

The interface keeps one :class:`LogRecord` per dispatch attempt. Entries on the
active list are scanned periodically: complete ones are dropped, incomplete
ones older than the timeout become :class:`MissingLink` objects, and those are
re-placed on a server that has not already failed the job.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .catalog import NsMap, is_ipv4, is_token
from .dispatch import JobRequest, SelectionDecision, place
from .errors import NoCapacity, ParseError

LOG_TITLE = "LOG FILE"
LOG_HEADER = "External IP\tApplication\tInternal IP\tNo. of Files\tReceived\tDispatchedAt"

TIMEOUT = "timeout"
SERVER_CRASH = "server_crash"


@dataclass
class LogRecord:
    external_ip: str
    app: str
    internal_ip: str
    n_files_expected: int
    n_files_received: int = 0
    dispatched_at: int = 0

    @property
    def complete(self) -> bool:
        return self.n_files_received >= self.n_files_expected


@dataclass
class ActiveEntry:
    job_id: str
    record: LogRecord


@dataclass(frozen=True)
class MissingLink:
    job_id: str
    record: LogRecord
    reason: str = TIMEOUT


def append_log(log: list, record: LogRecord) -> list:
    log.append(record)
    return log


def serialize_log(log: Iterable) -> bytes:
    lines = [LOG_TITLE, LOG_HEADER]
    for r in log:
        lines.append(
            f"{r.external_ip}\t{r.app}\t{r.internal_ip}\t{r.n_files_expected}"
            f"\t{r.n_files_received}\t{r.dispatched_at}"
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def _count(text: str, what: str, lineno: int) -> int:
    if not text.isdigit() or not text.isascii() or (len(text) > 1 and text[0] == "0"):
        raise ParseError(f"{what} is not a canonical non-negative integer: {text!r}", line=lineno)
    return int(text)


def parse_log(data: bytes) -> list:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"log is not UTF-8: {exc}") from None
    if not text.endswith("\n"):
        raise ParseError("log must end with LF", line=text.count("\n") + 1)
    lines = text[:-1].split("\n")
    if lines[0] != LOG_TITLE:
        raise ParseError(f"expected {LOG_TITLE!r}", line=1)
    if len(lines) < 2 or lines[1] != LOG_HEADER:
        raise ParseError("bad column header", line=2)
    log = []
    for lineno, line in enumerate(lines[2:], start=3):
        cols = line.split("\t")
        if len(cols) != 6:
            raise ParseError(f"expected 6 tab-separated columns, got {len(cols)}", line=lineno)
        ext, app, internal = cols[:3]
        if not is_ipv4(ext):
            raise ParseError(f"bad external IP {ext!r}", line=lineno)
        if not is_token(app):
            raise ParseError(f"bad application {app!r}", line=lineno)
        if not is_ipv4(internal):
            raise ParseError(f"bad internal IP {internal!r}", line=lineno)
        expected = _count(cols[3], "No. of Files", lineno)
        received = _count(cols[4], "Received", lineno)
        at = _count(cols[5], "DispatchedAt", lineno)
        if expected < 1:
            raise ParseError("No. of Files must be >= 1", line=lineno)
        if received > expected:
            raise ParseError(f"received {received} exceeds expected {expected}", line=lineno)
        log.append(LogRecord(ext, app, internal, expected, received, at))
    return log


def find_missing_links(active: list, now: int, timeout_t: int,
                       down: Optional[set] = None) -> tuple:
    """Scan the active list once, in order.

    Returns ``(missing, remaining)``. ``down`` optionally names internal IPs
    known to be crashed; their timed-out entries are tagged ``server_crash``.
    """
    if timeout_t <= 0:
        raise ValueError("timeout_t must be positive")
    down = down or set()
    missing, remaining = [], []
    for entry in active:
        rec = entry.record
        if rec.complete:
            continue
        if now - rec.dispatched_at >= timeout_t:
            reason = SERVER_CRASH if rec.internal_ip in down else TIMEOUT
            missing.append(MissingLink(entry.job_id, rec, reason))
        else:
            remaining.append(entry)
    return missing, remaining


def emergency_load_shift(nsmap: NsMap, missing: Iterable, requests: Mapping,
                         exclusions: Optional[dict] = None) -> list:
    """Re-place every missing job away from the servers that failed it.

    The failing server is released and marked inactive first. ``exclusions``
    maps job id to the set of ``(network, server)`` pairs already tried and is
    updated in place. Returns ``(job_id, SelectionDecision | NoCapacity)``
    pairs in input order.
    """
    if exclusions is None:
        exclusions = {}
    out = []
    for link in missing:
        req: JobRequest = requests[link.job_id]
        failed = nsmap.locate(link.record.internal_ip)
        excl = exclusions.setdefault(link.job_id, set())
        if failed not in excl:
            excl.add(failed)
            net = nsmap.network(failed[0])
            srv = net.server(failed[1])
            if srv.busy and srv.current_load > 0:
                srv.current_load -= 1
                net.current_load -= 1
                srv.busy = srv.current_load > 0
            srv.active = False
        try:
            out.append((link.job_id, place(nsmap, req, excl)))
        except NoCapacity as exc:
            exc.job_id = link.job_id
            out.append((link.job_id, exc))
    return out


@dataclass
class Reassigned:
    job_id: str
    decision: SelectionDecision
    previous: MissingLink


@dataclass
class Deferred:
    """Hosts exist but are all busy; retry on the next tick."""
    job_id: str
    link: MissingLink


@dataclass
class Abandoned:
    job_id: str
    link: MissingLink
    error: NoCapacity


@dataclass
class Monitor:
    """Interface-side monitoring state."""

    active: list = field(default_factory=list)
    log: list = field(default_factory=list)
    requests: dict = field(default_factory=dict)
    exclusions: dict = field(default_factory=dict)
    deferred: list = field(default_factory=list)

    def track(self, job_id: str, record: LogRecord) -> None:
        append_log(self.log, record)
        self.active.append(ActiveEntry(job_id, record))

    def entry(self, job_id: str) -> Optional[ActiveEntry]:
        for e in self.active:
            if e.job_id == job_id:
                return e
        return None


def next_tick(now: int, interval_2: int) -> int:
    """Next multiple of ``interval_2`` strictly after ``now``."""
    if interval_2 <= 0:
        raise ValueError("interval_2 must be positive")
    return (now // interval_2 + 1) * interval_2


def monitor_tick(monitor: Monitor, nsmap: NsMap, now: int, timeout_t: int,
                 down: Optional[set] = None) -> list:
    """One monitor pass: find missing links then shift their load.

    Returns the actions taken (:class:`Reassigned`, :class:`Deferred`,
    :class:`Abandoned`). Reassigned jobs get a fresh log record and active
    entry dispatched at ``now``.
    """
    if not monitor.active and not monitor.deferred:
        return []
    missing, monitor.active = find_missing_links(monitor.active, now, timeout_t, down)
    retry = monitor.deferred + missing
    monitor.deferred = []
    actions = []
    shifted = emergency_load_shift(nsmap, retry, monitor.requests, monitor.exclusions)
    for link, (job_id, result) in zip(retry, shifted):
        if isinstance(result, NoCapacity):
            if result.exhausted:
                actions.append(Abandoned(job_id, link, result))
            else:
                monitor.deferred.append(link)
                actions.append(Deferred(job_id, link))
            continue
        req = monitor.requests[job_id]
        record = LogRecord(
            external_ip=req.external_ip,
            app=req.app,
            internal_ip=nsmap.server(result.network, result.server).internal_ip,
            n_files_expected=req.n_files,
            dispatched_at=now,
        )
        monitor.track(job_id, record)
        actions.append(Reassigned(job_id, result, link))
    return actions
