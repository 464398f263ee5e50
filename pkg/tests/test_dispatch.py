import random
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nsroute.catalog import NetworkRecord, NsMap, ServerRecord, validate_topology
from nsroute.dispatch import (
    AccessFrequencyTable,
    ReplicaStore,
    TransmissionQueue,
    UpdateMessage,
    access_frequency,
    candidate_networks,
    combine_seeds,
    dispatch,
    enqueue_update,
    load_workload,
    network_order,
    propagate_inter,
    propagate_intra,
    queue_order_violations,
    record_access,
    select_network,
    select_server,
    seed_from_ip,
    seed_from_user,
    server_order,
    tie_key,
)
from nsroute.errors import EmptyTable, MalformedIp, NoCapacity, NoFreeServer, ValidationError

from conftest import make_request, random_topology
from oracles import (
    brute_force_network_order,
    brute_force_server_order,
    combine_oracle,
    fnv_oracle,
    tie_key_oracle,
)


class TestSeeds:
    def test_empty_user_is_offset_basis(self):
        assert seed_from_user("") == 14695981039346656037 == 0xCBF29CE484222325

    def test_single_byte(self):
        assert seed_from_user("a") == 0xAF63DC4C8601EC8C == fnv_oracle(b"a")

    @given(st.text(max_size=40))
    def test_user_seed_matches_oracle(self, s):
        assert seed_from_user(s) == seed_from_user(s) == fnv_oracle(s.encode())

    def test_ip_seed(self):
        d = seed_from_ip("10.20.30.40")
        assert d == seed_from_ip("10.20.30.40") == 0xDDF67076F633A3F5
        assert seed_from_ip("10.20.30.41") == 0xDDF66F76F633A242 != d

    @pytest.mark.parametrize("bad", ["", "10.20.30", "10.20.30.400", "a.b.c.d", "10.20.30.40 "])
    def test_malformed_ip(self, bad):
        with pytest.raises(MalformedIp):
            seed_from_ip(bad)

    def test_combine_identities(self):
        assert combine_seeds(0, 0) == 0
        assert combine_seeds(0x1234, 0) == 0x1234

    def test_combine_frozen(self):
        # frozen from the bit-list oracle
        assert combine_seeds(0xCBF29CE484222325, 0xAF63DC4C8601EC8C) == 0x4DF370682B41FF69

    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
    def test_combine_matches_oracle(self, u, i):
        assert combine_seeds(u, i) == combine_oracle(u, i)


class TestCandidates:
    def test_app4(self, table1):
        assert candidate_networks(table1, "App4") == [("n4", Fraction(1, 3)), ("n1", Fraction(1, 4))]

    def test_unhosted(self, table1):
        assert candidate_networks(table1, "App9") == []

    def test_app3_tie(self, table1):
        assert candidate_networks(table1, "App3") == [
            ("n2", Fraction(1, 3)), ("n3", Fraction(1, 3)), ("n4", Fraction(1, 3)), ("n1", Fraction(1, 4))]

    def test_region_ranks_first(self, table1):
        cands = candidate_networks(table1, "App4", region="north")
        assert [n for n, _ in cands] == ["n1", "n4"]


class TestSelectNetwork:
    def test_app4_prefers_n4(self, table1):
        assert select_network(table1, make_request("App4")) == "n4"

    def test_saturated_n4_falls_to_n1(self, table1):
        table1.network("n4").current_load = table1.network("n4").threshold_load
        assert select_network(table1, make_request("App4")) == "n1"

    def test_all_saturated(self, table1):
        for n in table1.networks:
            n.current_load = n.threshold_load
        with pytest.raises(NoCapacity):
            select_network(table1, make_request("App4"))

    def test_region_from_ip(self, table1):
        assert select_network(table1, make_request("App4", ip="172.16.0.9")) == "n1"

    def test_app3_tie_is_seed_indexed(self, table1):
        req = make_request("App3")
        expected = ["n2", "n3", "n4"][tie_key_oracle("alice", "10.20.30.40") % 3]
        assert select_network(table1, req) == expected
        order = network_order(table1, req)
        assert [n for n, _, _ in order][:3] == (["n2", "n3", "n4"] * 2)[tie_key(req) % 3:][:3]
        assert all(tied for _, _, tied in order[:3]) and not order[3][2]


class TestSelectServer:
    def test_n4_app4_tie(self, table1):
        req = make_request("App4")
        pick = select_server(table1, "n4", req)
        assert pick == ["s2", "s3"][tie_key_oracle("alice", "10.20.30.40") % 2]
        assert select_server(table1, "n4", req) == pick

    def test_busy_filter(self, table1):
        s2 = table1.server("n4", "s2")
        s2.busy, s2.current_load = True, 1
        table1.network("n4").current_load = 1
        assert select_server(table1, "n4", make_request("App4")) == "s3"

    def test_all_hosts_busy(self, table1):
        for sid in ("s2", "s3", "s4"):
            table1.server("n4", sid).busy = True
            table1.server("n4", sid).current_load = 1
        with pytest.raises(NoFreeServer):
            select_server(table1, "n4", make_request("App4"))

    def test_inactive_filter(self, table1):
        table1.server("n4", "s2").active = False
        table1.server("n4", "s3").active = False
        assert select_server(table1, "n4", make_request("App4")) == "s4"


class TestDispatch:
    def test_table1_app4(self, table1):
        table = AccessFrequencyTable()
        decision, update = dispatch(table1, make_request("App4"), table)
        assert decision.network == "n4" and decision.server in {"s2", "s3"}
        assert decision.score == Fraction(1, 2) and decision.tie_broken
        srv = table1.server("n4", decision.server)
        assert srv.busy and srv.current_load == 1 and table1.network("n4").current_load == 1
        assert update.frequency_at_send == 1 and update.serving_server == decision.server
        validate_topology(table1)

    def test_second_request_goes_elsewhere(self, table1):
        table = AccessFrequencyTable()
        d1, _ = dispatch(table1, make_request("App4", job_id="j1"), table)
        d2, _ = dispatch(table1, make_request("App4", job_id="j2"), table)
        assert (d1.network, d1.server) != (d2.network, d2.server)

    def test_falls_back_to_next_network(self, table1):
        for sid in ("s2", "s3", "s4"):
            table1.server("n4", sid).active = False
        d, _ = dispatch(table1, make_request("App4"), AccessFrequencyTable())
        assert d.network == "n1"

    def test_unhosted(self, table1):
        table = AccessFrequencyTable()
        with pytest.raises(NoCapacity):
            dispatch(table1, make_request("App9"), table)
        assert table.total == 0

    def test_exclusion(self, table1):
        d, _ = dispatch(table1, make_request("App4"), AccessFrequencyTable(),
                        exclude={("n4", "s2"), ("n4", "s3")})
        assert (d.network, d.server) == ("n4", "s4")

    def test_deterministic_serialization(self, table1):
        from nsroute.catalog import table1_topology
        a, _ = dispatch(table1, make_request("App3"), AccessFrequencyTable())
        b, _ = dispatch(table1_topology(), make_request("App3"), AccessFrequencyTable())
        assert a.serialize() == b.serialize()
        assert b'"score":"' in a.serialize()


class TestSelectionOracle:
    def _as_dicts(self, nsmap):
        nets = []
        for n in nsmap.networks:
            apps = set()
            for s in n.servers:
                apps |= s.apps
            nets.append({"id": n.id, "region": n.region, "apps": apps,
                         "load": n.current_load, "threshold": n.threshold_load})
        return nets

    @pytest.mark.parametrize("seed", range(60))
    def test_random_topologies(self, seed):
        rng = random.Random(seed)
        nsmap, apps = random_topology(rng)
        validate_topology(nsmap)
        for k in range(5):
            req = make_request(rng.choice(apps), job_id=f"j{k}", user_id=f"u{rng.randrange(99)}",
                               ip=rng.choice(["172.16.1.2", "172.17.3.4", "10.0.0.1"]))
            key = tie_key_oracle(req.user_id, req.external_ip)
            expect = brute_force_network_order(self._as_dicts(nsmap), req.app,
                                               nsmap.region_of(req.external_ip), key)
            assert [n for n, _, _ in network_order(nsmap, req)] == expect
            for net in nsmap.networks:
                servers = [{"id": s.id, "apps": s.apps, "active": s.active, "busy": s.busy,
                            "load": s.current_load, "threshold": s.threshold_load} for s in net.servers]
                assert [s for s, _, _ in server_order(nsmap, net.id, req)] == \
                    brute_force_server_order(servers, req.app, key)

    @pytest.mark.parametrize("seed", range(20))
    def test_argmax_invariant_under_uniform_duplication(self, seed):
        rng = random.Random(1000 + seed)
        nsmap, apps = random_topology(rng)
        doubled = NsMap(
            [NetworkRecord(n.id, [replace(s, apps=s.apps | {a + "_dup" for a in s.apps}) for s in n.servers],
                           n.region, n.threshold_load, n.current_load) for n in nsmap.networks],
            nsmap.ip_regions,
        )
        for app in apps:
            req = make_request(app, user_id=f"u{seed}")
            try:
                a = select_network(nsmap, req)
            except NoCapacity:
                with pytest.raises(NoCapacity):
                    select_network(doubled, req)
                continue
            assert select_network(doubled, req) == a


class TestAccessFrequency:
    def test_counts(self):
        t = AccessFrequencyTable()
        record_access(t, "app1")
        assert t.counts == {"app1": 1} and t.total == 1
        record_access(t, "app1")
        record_access(t, "app2")
        assert t.counts == {"app1": 2, "app2": 1} and t.total == 3
        assert access_frequency(t, "app1") == Fraction(2, 3)
        assert access_frequency(t, "app9") == 0

    def test_single_app(self):
        t = record_access(AccessFrequencyTable(), "x")
        assert access_frequency(t, "x") == 1

    def test_not_idempotent(self):
        once = record_access(AccessFrequencyTable(), "x")
        twice = record_access(record_access(AccessFrequencyTable(), "x"), "x")
        assert once != twice

    def test_empty_table(self):
        with pytest.raises(EmptyTable):
            access_frequency(AccessFrequencyTable(), "x")

    @given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=50))
    def test_frequencies_sum_to_one(self, seq):
        t = AccessFrequencyTable()
        for a in seq:
            record_access(t, a)
        assert t.total == sum(t.counts.values())
        assert sum(access_frequency(t, a) for a in t.counts) == 1


def _msg(job, freq, t):
    return UpdateMessage(job, "App1", "10.20.30.40", "n1", "s1", t, Fraction(freq))


class TestTransmissionQueue:
    def test_higher_frequency_first(self):
        q = TransmissionQueue([_msg("a", "1/2", 0), _msg("b", "1/2", 1)])
        enqueue_update(q, _msg("c", "7/10", 2))
        assert [m.job_id for m in q] == ["c", "a", "b"]

    def test_equal_frequency_older_first(self):
        q = TransmissionQueue()
        enqueue_update(q, _msg("new", "1/2", 9))
        enqueue_update(q, _msg("old", "1/2", 3))
        assert [m.job_id for m in q.drain()] == ["old", "new"]

    def test_empty(self):
        q = enqueue_update(TransmissionQueue(), _msg("a", 1, 0))
        assert len(q) == 1

    @given(st.lists(st.tuples(st.fractions(0, 1), st.integers(0, 50)), max_size=40))
    def test_pop_order_total(self, items):
        q = TransmissionQueue()
        for i, (f, t) in enumerate(items):
            q.push(_msg(f"j{i:03d}", f, t))
        popped = list(q.drain())
        assert queue_order_violations(popped) == 0
        assert len(popped) == len(items)


class TestPropagation:
    def test_intra_reaches_all_servers(self, table1):
        store = ReplicaStore()
        u = _msg("j1", 1, 0)
        assert propagate_intra(table1, "n2", replace(u, serving_network="n2"), store) == {"s1", "s2", "s3", "s4"}

    def test_single_server_network(self):
        m = NsMap([NetworkRecord("n0", [ServerRecord("s1", "10.0.0.1", frozenset({"x"}))])])
        assert propagate_intra(m, "n0", _msg("j", 1, 0), ReplicaStore()) == {"s1"}

    def test_idempotent_replay(self, table1):
        store = ReplicaStore()
        u = _msg("j1", 1, 0)
        propagate_intra(table1, "n1", u, store)
        snapshot = {k: (dict(v.updates), dict(v.table.counts)) for k, v in store.items()}
        assert propagate_intra(table1, "n1", u, store) == {"s1", "s2", "s3", "s4"}
        assert snapshot == {k: (dict(v.updates), dict(v.table.counts)) for k, v in store.items()}

    def test_inter_from_n1(self, table1):
        store = ReplicaStore()
        u = _msg("j1", 1, 0)
        propagate_intra(table1, "n1", u, store)
        assert propagate_inter(table1, "n1", u, store) == {"n2", "n3", "n4"}
        for net in table1.networks:
            for srv in net.servers:
                assert store[(net.id, srv.id)].updates["j1"] == u

    def test_inter_from_empty_catalog(self):
        m = NsMap([
            NetworkRecord("n0", [ServerRecord("s1", "10.0.0.1")]),
            NetworkRecord("n1", [ServerRecord("s1", "10.0.0.2", frozenset({"x"}))]),
        ])
        assert propagate_inter(m, "n0", _msg("j", 1, 0), ReplicaStore()) == set()

    def test_closure_excludes_unrelated(self):
        m = NsMap([
            NetworkRecord("a", [ServerRecord("s1", "10.0.0.1", frozenset({"x"}))]),
            NetworkRecord("b", [ServerRecord("s1", "10.0.0.2", frozenset({"x", "y"}))]),
            NetworkRecord("c", [ServerRecord("s1", "10.0.0.3", frozenset({"z"}))]),
        ])
        store = ReplicaStore()
        u = _msg("j", 1, 0)
        propagate_intra(m, "a", u, store)
        assert propagate_inter(m, "a", u, store) == {"b"}
        assert set(store) == {("a", "s1"), ("b", "s1")}


class TestWorkload:
    def test_parse(self):
        doc = b'{"jobs": [{"job_id": "j2", "user_id": "u", "external_ip": "10.20.30.41", "app": "App2",' \
              b' "n_files": 6, "arrival_time": 5, "payload": "x=1"},' \
              b' {"job_id": "j1", "user_id": "u", "external_ip": "10.20.30.40", "app": "App1",' \
              b' "n_files": 4, "arrival_time": 0}]}'
        jobs = load_workload(doc)
        assert [j.job_id for j in jobs] == ["j1", "j2"]
        assert jobs[1].payload == b"x=1" and jobs[0].payload == b""

    def test_rejects_zero_files_and_duplicates(self):
        base = '{"job_id": "j1", "user_id": "u", "external_ip": "10.0.0.1", "app": "a", "n_files": %d, "arrival_time": 0}'
        with pytest.raises(ValidationError):
            load_workload('{"jobs": [%s]}' % (base % 0))
        with pytest.raises(ValidationError, match="duplicate"):
            load_workload('{"jobs": [%s, %s]}' % (base % 1, base % 1))
