"""Network-server map (NS map) and catalog similarity.

The NS map records which applications each server of each network hosts,
together with the per-node load counters the dispatcher consults. Catalog
similarity is the Jaccard ratio of two application sets, kept as an exact
:class:`fractions.Fraction` so ties can be detected without rounding.
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Iterable, Optional

from .errors import ParseError, UnknownNetwork, UnknownServer, ValidationError

TOKEN_RE = re.compile(r"[A-Za-z0-9_]+\Z")

_NETWORK_KEYS = {"id", "region", "threshold_load", "servers"}
_SERVER_KEYS = {"id", "internal_ip", "threshold_load", "apps"}
_TOP_KEYS = {"networks", "ip_regions"}


def is_token(value) -> bool:
    return isinstance(value, str) and TOKEN_RE.match(value) is not None


def is_ipv4(value) -> bool:
    if not isinstance(value, str):
        return False
    try:
        ipaddress.IPv4Address(value)
    except ValueError:
        return False
    return True


@dataclass
class ServerRecord:
    id: str
    internal_ip: str
    apps: frozenset = frozenset()
    threshold_load: int = 1
    active: bool = True
    busy: bool = False
    current_load: int = 0


@dataclass
class NetworkRecord:
    id: str
    servers: list = field(default_factory=list)
    region: Optional[str] = None
    threshold_load: int = 1
    current_load: int = 0

    def server(self, server_id: str) -> ServerRecord:
        for srv in self.servers:
            if srv.id == server_id:
                return srv
        raise UnknownServer(f"{self.id}:{server_id}")


@dataclass
class NsMap:
    networks: list = field(default_factory=list)
    ip_regions: dict = field(default_factory=dict)

    def network(self, network_id: str) -> NetworkRecord:
        for net in self.networks:
            if net.id == network_id:
                return net
        raise UnknownNetwork(network_id)

    def server(self, network_id: str, server_id: str) -> ServerRecord:
        return self.network(network_id).server(server_id)

    def locate(self, internal_ip: str) -> tuple:
        """Return ``(network_id, server_id)`` owning an internal IP."""
        for net in self.networks:
            for srv in net.servers:
                if srv.internal_ip == internal_ip:
                    return net.id, srv.id
        raise UnknownServer(internal_ip)

    def region_of(self, external_ip: str) -> Optional[str]:
        """Longest octet-aligned prefix match of ``external_ip`` in ip_regions."""
        best, best_len = None, -1
        for prefix, region in self.ip_regions.items():
            p = prefix.rstrip(".")
            if (external_ip == p or external_ip.startswith(p + ".")) and len(p) > best_len:
                best, best_len = region, len(p)
        return best

    def iter_servers(self):
        for net in self.networks:
            for srv in net.servers:
                yield net, srv


def network_app_set(nsmap: NsMap, net: str) -> frozenset:
    apps = set()
    for srv in nsmap.network(net).servers:
        apps |= srv.apps
    return frozenset(apps)


def server_app_set(nsmap: NsMap, net: str, srv: str) -> frozenset:
    return nsmap.server(net, srv).apps


def jaccard(a: Iterable, b: Iterable) -> Fraction:
    """|a & b| / |a | b| with the convention that two empty sets score 0."""
    a, b = set(a), set(b)
    union = len(a | b)
    if union == 0:
        return Fraction(0)
    return Fraction(len(a & b), union)


def similarity_networks(a: Iterable, b: Iterable) -> Fraction:
    return jaccard(a, b)


def similarity_servers(a: Iterable, b: Iterable) -> Fraction:
    return jaccard(a, b)


def format_ratio(r: Fraction) -> str:
    """Render as ``p/q`` (``1/1`` rather than ``1``)."""
    return f"{r.numerator}/{r.denominator}"


def _require(cond, message):
    if not cond:
        raise ValidationError(message)


def _positive_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value > 0


def _nonneg_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def validate_topology(nsmap: NsMap) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    seen_nets = set()
    seen_ips = set()
    for prefix, region in nsmap.ip_regions.items():
        _require(isinstance(prefix, str) and prefix, f"bad ip_regions prefix {prefix!r}")
        _require(is_token(region), f"bad region {region!r} for prefix {prefix!r}")
    for net in nsmap.networks:
        _require(is_token(net.id), f"bad network id {net.id!r}")
        _require(net.id not in seen_nets, f"duplicate network id {net.id!r}")
        seen_nets.add(net.id)
        _require(net.region is None or is_token(net.region), f"{net.id}: bad region {net.region!r}")
        _require(_positive_int(net.threshold_load), f"{net.id}: threshold_load must be a positive integer")
        _require(_nonneg_int(net.current_load), f"{net.id}: current_load must be non-negative")
        seen_srv = set()
        total = 0
        for srv in net.servers:
            where = f"{net.id}:{srv.id}"
            _require(is_token(srv.id), f"bad server id {srv.id!r} in {net.id}")
            _require(srv.id not in seen_srv, f"duplicate server id {where}")
            seen_srv.add(srv.id)
            _require(is_ipv4(srv.internal_ip), f"{where}: bad internal_ip {srv.internal_ip!r}")
            _require(srv.internal_ip not in seen_ips, f"{where}: duplicate internal_ip {srv.internal_ip}")
            seen_ips.add(srv.internal_ip)
            for app in srv.apps:
                _require(is_token(app), f"{where}: bad application id {app!r}")
            _require(_positive_int(srv.threshold_load), f"{where}: threshold_load must be a positive integer")
            _require(_nonneg_int(srv.current_load), f"{where}: current_load must be non-negative")
            _require(srv.current_load <= srv.threshold_load, f"{where}: current_load exceeds threshold_load")
            _require(not srv.busy or srv.current_load >= 1, f"{where}: busy with current_load 0")
            total += srv.current_load
        _require(net.current_load == total, f"{net.id}: current_load {net.current_load} != sum of server loads {total}")


def _check_keys(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ValidationError(f"{where}: missing field(s) {sorted(missing)}")


def topology_from_dict(doc) -> NsMap:
    _check_keys(doc, _TOP_KEYS, {"networks"}, "topology")
    ip_regions = doc.get("ip_regions", {})
    if not isinstance(ip_regions, dict):
        raise ValidationError("ip_regions: expected an object")
    if not isinstance(doc["networks"], list):
        raise ValidationError("networks: expected a list")
    networks = []
    for i, n in enumerate(doc["networks"]):
        _check_keys(n, _NETWORK_KEYS, {"id", "threshold_load", "servers"}, f"networks[{i}]")
        if not isinstance(n["servers"], list):
            raise ValidationError(f"networks[{i}].servers: expected a list")
        servers = []
        for j, s in enumerate(n["servers"]):
            where = f"networks[{i}].servers[{j}]"
            _check_keys(s, _SERVER_KEYS, _SERVER_KEYS, where)
            if not isinstance(s["apps"], list):
                raise ValidationError(f"{where}.apps: expected a list")
            servers.append(ServerRecord(
                id=s["id"],
                internal_ip=s["internal_ip"],
                apps=frozenset(s["apps"]),
                threshold_load=s["threshold_load"],
            ))
        networks.append(NetworkRecord(
            id=n["id"],
            servers=servers,
            region=n.get("region"),
            threshold_load=n["threshold_load"],
        ))
    nsmap = NsMap(networks=networks, ip_regions=dict(ip_regions))
    validate_topology(nsmap)
    return nsmap


def load_topology(data) -> NsMap:
    """Parse and validate a JSON topology document (bytes or str)."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"topology is not UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return topology_from_dict(doc)


def topology_to_dict(nsmap: NsMap) -> dict:
    """Inverse of :func:`topology_from_dict` (static fields only)."""
    networks = []
    for net in nsmap.networks:
        n = {
            "id": net.id,
            "threshold_load": net.threshold_load,
            "servers": [
                {
                    "id": s.id,
                    "internal_ip": s.internal_ip,
                    "threshold_load": s.threshold_load,
                    "apps": sorted(s.apps),
                }
                for s in net.servers
            ],
        }
        if net.region is not None:
            n["region"] = net.region
        networks.append(n)
    return {"networks": networks, "ip_regions": dict(sorted(nsmap.ip_regions.items()))}


def table1_topology_bytes() -> bytes:
    return resources.files("nsroute.data").joinpath("table1_topology.json").read_bytes()


def table1_topology() -> NsMap:
    """The four-network, sixteen-server NS map used throughout the tests and demos."""
    return load_topology(table1_topology_bytes())
