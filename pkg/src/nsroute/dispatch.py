"""Request routing: nearest network, nearest server, and update propagation.

A request for application ``x`` is scored against each network by the
Jaccard similarity of ``{x}`` and the network's catalog, so smaller, more
specialised catalogs rank as "nearer". Networks in the caller's region come
first. Exact score ties are broken by a per-request key derived from FNV-1a
digests of the user id and external IP, which keeps routing reproducible
while still spreading equal-score requests across hosts.
"""

from __future__ import annotations

import bisect
import ipaddress
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from itertools import groupby
from typing import Iterable, Optional

from .catalog import (
    NsMap,
    format_ratio,
    is_ipv4,
    is_token,
    network_app_set,
    similarity_networks,
    similarity_servers,
)
from .errors import (
    EmptyTable,
    MalformedIp,
    NoCapacity,
    NoFreeServer,
    ParseError,
    ValidationError,
)
from .hashing import fnv1a_64, rotl64


@dataclass(frozen=True)
class JobRequest:
    job_id: str
    user_id: str
    external_ip: str
    app: str
    payload: bytes = b""
    n_files: int = 1
    arrival_time: int = 0

    def __post_init__(self):
        if not is_token(self.job_id):
            raise ValidationError(f"bad job_id {self.job_id!r}")
        if not is_token(self.app):
            raise ValidationError(f"{self.job_id}: bad application id {self.app!r}")
        if not is_ipv4(self.external_ip):
            raise ValidationError(f"{self.job_id}: bad external_ip {self.external_ip!r}")
        if not isinstance(self.n_files, int) or self.n_files < 1:
            raise ValidationError(f"{self.job_id}: n_files must be >= 1")
        if not isinstance(self.arrival_time, int) or self.arrival_time < 0:
            raise ValidationError(f"{self.job_id}: arrival_time must be a non-negative integer")


@dataclass(frozen=True)
class SelectionDecision:
    network: str
    server: str
    score: Fraction
    tie_broken: bool = False

    def serialize(self) -> bytes:
        doc = asdict(self)
        doc["score"] = format_ratio(self.score)
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class AccessFrequencyTable:
    counts: dict = field(default_factory=dict)
    total: int = 0


@dataclass(frozen=True)
class UpdateMessage:
    job_id: str
    app: str
    external_ip: str
    serving_network: str
    serving_server: str
    created_at: int
    frequency_at_send: Fraction

    @property
    def priority(self):
        return (-self.frequency_at_send, self.created_at, self.job_id)


# --- seeds -----------------------------------------------------------------

def seed_from_user(user_id: str) -> int:
    return fnv1a_64(user_id.encode("utf-8"))


def seed_from_ip(external_ip: str) -> int:
    try:
        ipaddress.IPv4Address(external_ip)
    except (ValueError, TypeError):
        raise MalformedIp(f"not a dotted-quad IPv4 address: {external_ip!r}") from None
    return fnv1a_64(external_ip.encode("ascii"))


def combine_seeds(user_seed: int, ip_seed: int) -> int:
    return user_seed ^ rotl64(ip_seed, 32)


def tie_key(req: JobRequest) -> int:
    return combine_seeds(seed_from_user(req.user_id), seed_from_ip(req.external_ip))


# --- ranking ---------------------------------------------------------------

def _rotate_ties(items, group_key, k):
    """Rotate each run of equal ``group_key`` by ``k mod len(run)``.

    Returns ``(item, tied)`` pairs; the first member of each rotated run is the
    seed-indexed pick for that run.
    """
    out = []
    for _, grp in groupby(items, key=group_key):
        grp = list(grp)
        i = k % len(grp)
        tied = len(grp) > 1
        out.extend((item, tied) for item in grp[i:] + grp[:i])
    return out


def candidate_networks(nsmap: NsMap, app: str, region: Optional[str] = None) -> list:
    """All networks hosting ``app`` as ``(network_id, score)``, best first."""
    scored = []
    for net in nsmap.networks:
        apps = network_app_set(nsmap, net.id)
        if app in apps:
            match = region is not None and net.region == region
            scored.append((match, similarity_networks({app}, apps), net.id))
    scored.sort(key=lambda t: (not t[0], -t[1], t[2]))
    return [(net_id, score) for _, score, net_id in scored]


def network_order(nsmap: NsMap, req: JobRequest, key: Optional[int] = None) -> list:
    """Admissible networks in try-order as ``(network_id, score, tied)``."""
    if key is None:
        key = tie_key(req)
    region = nsmap.region_of(req.external_ip)
    admissible = []
    for net_id, score in candidate_networks(nsmap, req.app, region):
        net = nsmap.network(net_id)
        if net.current_load >= net.threshold_load:
            continue
        match = region is not None and net.region == region
        admissible.append((match, score, net_id))
    rotated = _rotate_ties(admissible, lambda t: (t[0], t[1]), key)
    return [(net_id, score, tied) for (_, score, net_id), tied in rotated]


def server_order(nsmap: NsMap, net: str, req: JobRequest, exclude: Iterable = (),
                 key: Optional[int] = None) -> list:
    """Free servers of ``net`` hosting ``req.app`` as ``(server_id, score, tied)``."""
    if key is None:
        key = tie_key(req)
    exclude = set(exclude)
    network = nsmap.network(net)
    cands = []
    for srv in network.servers:
        if (req.app not in srv.apps or not srv.active or srv.busy
                or srv.current_load >= srv.threshold_load or (net, srv.id) in exclude):
            continue
        cands.append((similarity_servers({req.app}, srv.apps), srv.id))
    cands.sort(key=lambda t: (-t[0], t[1]))
    rotated = _rotate_ties(cands, lambda t: t[0], key)
    return [(srv_id, score, tied) for (score, srv_id), tied in rotated]


def select_network(nsmap: NsMap, req: JobRequest) -> str:
    order = network_order(nsmap, req)
    if not order:
        raise NoCapacity(f"no admissible network hosts {req.app}", job_id=req.job_id)
    return order[0][0]


def select_server(nsmap: NsMap, net: str, req: JobRequest, exclude: Iterable = ()) -> str:
    order = server_order(nsmap, net, req, exclude)
    if not order:
        raise NoFreeServer(f"no free server in {net} for {req.app}")
    return order[0][0]


def _has_live_host(nsmap: NsMap, app: str, exclude) -> bool:
    return any(
        app in srv.apps and srv.active and (net.id, srv.id) not in exclude
        for net, srv in nsmap.iter_servers()
    )


def place(nsmap: NsMap, req: JobRequest, exclude: Iterable = ()) -> SelectionDecision:
    """Select network then server, falling back across networks, and mark the
    chosen server busy. ``exclude`` holds ``(network, server)`` pairs that
    already failed this job."""
    exclude = frozenset(exclude)
    key = tie_key(req)
    for net_id, _, net_tied in network_order(nsmap, req, key):
        servers = server_order(nsmap, net_id, req, exclude, key)
        if not servers:
            continue
        srv_id, srv_score, srv_tied = servers[0]
        net = nsmap.network(net_id)
        srv = net.server(srv_id)
        srv.busy = True
        srv.current_load += 1
        net.current_load += 1
        return SelectionDecision(net_id, srv_id, srv_score, net_tied or srv_tied)
    raise NoCapacity(
        f"{req.job_id}: no admissible server for {req.app}",
        job_id=req.job_id,
        exhausted=not _has_live_host(nsmap, req.app, exclude),
    )


# --- access frequency ------------------------------------------------------

def record_access(table: AccessFrequencyTable, app: str) -> AccessFrequencyTable:
    table.counts[app] = table.counts.get(app, 0) + 1
    table.total += 1
    return table


def access_frequency(table: AccessFrequencyTable, app: str) -> Fraction:
    if table.total == 0:
        raise EmptyTable("no accesses recorded")
    return Fraction(table.counts.get(app, 0), table.total)


def dispatch(nsmap: NsMap, req: JobRequest, table: AccessFrequencyTable,
             exclude: Iterable = ()) -> tuple:
    """Route ``req`` and return ``(decision, update_message)``.

    The access is recorded only once placement succeeds; the update message
    snapshots the post-recording frequency of ``req.app``.
    """
    decision = place(nsmap, req, exclude)
    record_access(table, req.app)
    update = UpdateMessage(
        job_id=req.job_id,
        app=req.app,
        external_ip=req.external_ip,
        serving_network=decision.network,
        serving_server=decision.server,
        created_at=req.arrival_time,
        frequency_at_send=access_frequency(table, req.app),
    )
    return decision, update


# --- transmission queue ----------------------------------------------------

class TransmissionQueue:
    """Updates ordered by (frequency desc, created_at asc, job_id asc)."""

    def __init__(self, entries: Iterable = ()):
        self.entries = sorted(entries, key=lambda u: u.priority)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def push(self, u: UpdateMessage) -> None:
        bisect.insort_right(self.entries, u, key=lambda m: m.priority)

    def pop(self) -> UpdateMessage:
        return self.entries.pop(0)

    def drain(self):
        while self.entries:
            yield self.pop()


def enqueue_update(q: TransmissionQueue, u: UpdateMessage) -> TransmissionQueue:
    q.push(u)
    return q


def queue_order_violations(popped: list) -> int:
    """Adjacent pairs in a pop sequence that break the transmission order."""
    bad = 0
    for a, b in zip(popped, popped[1:]):
        if a.frequency_at_send < b.frequency_at_send:
            bad += 1
        elif a.frequency_at_send == b.frequency_at_send and a.created_at > b.created_at:
            bad += 1
    return bad


# --- replicas and propagation ---------------------------------------------

@dataclass
class Replica:
    updates: dict = field(default_factory=dict)
    table: AccessFrequencyTable = field(default_factory=AccessFrequencyTable)


class ReplicaStore(dict):
    """Maps ``(network_id, server_id)`` to that server's :class:`Replica`."""

    def replica(self, net: str, srv: str) -> Replica:
        key = (net, srv)
        if key not in self:
            self[key] = Replica()
        return self[key]

    def apply(self, net: str, srv: str, u: UpdateMessage) -> bool:
        rep = self.replica(net, srv)
        if u.job_id in rep.updates:
            return False
        rep.updates[u.job_id] = u
        record_access(rep.table, u.app)
        return True


def propagate_intra(nsmap: NsMap, net: str, u: UpdateMessage, store: ReplicaStore) -> set:
    network = nsmap.network(net)
    for srv in network.servers:
        store.apply(net, srv.id, u)
    return {srv.id for srv in network.servers}


def related_networks(nsmap: NsMap, origin: str) -> set:
    origin_apps = network_app_set(nsmap, origin)
    return {
        net.id
        for net in nsmap.networks
        if net.id != origin and similarity_networks(origin_apps, network_app_set(nsmap, net.id)) > 0
    }


def propagate_inter(nsmap: NsMap, origin: str, u: UpdateMessage, store: ReplicaStore) -> set:
    related = related_networks(nsmap, origin)
    for net_id in sorted(related):
        propagate_intra(nsmap, net_id, u, store)
    return related


# --- workload document -----------------------------------------------------

_JOB_KEYS = {"job_id", "user_id", "external_ip", "app", "n_files", "arrival_time", "payload"}


def load_workload(data) -> list:
    """Parse a JSON workload document into requests sorted by arrival."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"workload is not UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(doc, dict) or set(doc) != {"jobs"} or not isinstance(doc["jobs"], list):
        raise ValidationError('workload must be an object with a single "jobs" list')
    jobs, seen = [], set()
    for i, j in enumerate(doc["jobs"]):
        if not isinstance(j, dict):
            raise ValidationError(f"jobs[{i}]: expected an object")
        unknown = set(j) - _JOB_KEYS
        missing = _JOB_KEYS - {"payload"} - set(j)
        if unknown or missing:
            raise ValidationError(f"jobs[{i}]: unknown {sorted(unknown)} / missing {sorted(missing)}")
        if not isinstance(j["user_id"], str) or not j["user_id"] or any(c.isspace() for c in j["user_id"]):
            raise ValidationError(f"jobs[{i}]: bad user_id {j['user_id']!r}")
        payload = j.get("payload", "")
        if not isinstance(payload, str):
            raise ValidationError(f"jobs[{i}]: payload must be text")
        req = JobRequest(
            job_id=j["job_id"], user_id=j["user_id"], external_ip=j["external_ip"],
            app=j["app"], payload=payload.encode("utf-8"), n_files=j["n_files"],
            arrival_time=j["arrival_time"],
        )
        if req.job_id in seen:
            raise ValidationError(f"duplicate job_id {req.job_id!r}")
        seen.add(req.job_id)
        jobs.append(req)
    jobs.sort(key=lambda r: (r.arrival_time, r.job_id))
    return jobs


def workload_to_dict(jobs: Iterable) -> dict:
    return {"jobs": [
        {"job_id": r.job_id, "user_id": r.user_id, "external_ip": r.external_ip,
         "app": r.app, "n_files": r.n_files, "arrival_time": r.arrival_time,
         "payload": r.payload.decode("utf-8")}
        for r in jobs
    ]}
