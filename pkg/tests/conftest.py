import random

import pytest

from nsroute.catalog import NetworkRecord, NsMap, ServerRecord, table1_topology
from nsroute.dispatch import JobRequest

TABLE1_ROWS = {
    "n1": [{"App1", "App2", "App3", "App4"}, {"App1", "App2", "App4"}, {"App1", "App4"}, {"App2", "App3"}],
    "n2": [{"App1"}, {"App1", "App2"}, {"App1", "App2", "App3"}, {"App3"}],
    "n3": [{"App1"}, {"App1"}, {"App1", "App3"}, {"App2"}],
    "n4": [{"App2", "App3"}, {"App3", "App4"}, {"App2", "App4"}, {"App2", "App3", "App4"}],
}


@pytest.fixture
def table1():
    return table1_topology()


def make_request(app="App4", job_id="j1", user_id="alice", ip="10.20.30.40",
                 n_files=4, at=0, payload=b"plot(x)"):
    return JobRequest(job_id, user_id, ip, app, payload, n_files, at)


def random_topology(rng: random.Random, max_nets=5, max_servers=5, max_apps=6):
    apps = [f"a{i}" for i in range(rng.randint(1, max_apps))]
    regions = ["r0", "r1", None]
    nets = []
    ip = 0
    for i in range(rng.randint(1, max_nets)):
        servers = []
        for j in range(rng.randint(0, max_servers)):
            ip += 1
            busy = rng.random() < 0.3
            servers.append(ServerRecord(
                id=f"s{j}", internal_ip=f"192.168.{ip // 250}.{ip % 250 + 1}",
                apps=frozenset(a for a in apps if rng.random() < 0.4),
                threshold_load=1, active=rng.random() < 0.85,
                busy=busy, current_load=1 if busy else 0,
            ))
        load = sum(s.current_load for s in servers)
        nets.append(NetworkRecord(
            id=f"n{i}", servers=servers, region=rng.choice(regions),
            threshold_load=rng.randint(1, max_servers + 1), current_load=load,
        ))
    return NsMap(nets, {"172.16": "r0", "172.17": "r1"}), apps
