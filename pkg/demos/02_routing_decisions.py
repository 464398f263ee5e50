"""
Routing a request to the nearest network and server
===================================================

A request for one application scores each hosting network by the similarity
of {app} to that network's catalog, so specialised networks win. Exact ties
are split by a key hashed from the user id and external IP.
"""

from nsroute.catalog import table1_topology
from nsroute.dispatch import (
    AccessFrequencyTable,
    JobRequest,
    candidate_networks,
    dispatch,
    network_order,
    server_order,
    tie_key,
)
from nsroute.errors import NoCapacity

nsmap = table1_topology()
req = JobRequest("j1", "alice", "10.20.30.40", "App4", b"plot(x)", 4, 0)

# n4 hosts three apps, n1 hosts four, so App4 is "nearer" to n4.
print("candidates for App4:", candidate_networks(nsmap, "App4"))

# App3 ties n2, n3 and n4 at 1/3; the tie key decides which goes first.
req3 = JobRequest("j2", "alice", "10.20.30.40", "App3")
print(f"tie key {tie_key(req3):#018x}")
print("try-order for App3:", [(n, str(s), tied) for n, s, tied in network_order(nsmap, req3)])

# Inside n4, s2 {App3,App4} and s3 {App2,App4} tie at 1/2, s4 trails at 1/3.
print("servers in n4:", [(s, str(score)) for s, score, _ in server_order(nsmap, "n4", req)])

# A client in 172.16/16 maps to region "north", which n1 serves; region beats score.
north = JobRequest("j3", "carol", "172.16.5.5", "App4")
print("from the north region:", network_order(nsmap, north)[0][0])

# Dispatching marks the server busy, so identical requests spread out
# until the network reaches its threshold load of 3.
table = AccessFrequencyTable()
for i in range(8):
    r = JobRequest(f"k{i}", "alice", "10.20.30.40", "App4")
    try:
        d, update = dispatch(nsmap, r, table)
        print(f"k{i} -> {d.network}/{d.server}  freq={update.frequency_at_send}")
    except NoCapacity as exc:
        print(f"k{i} -> unschedulable ({exc})")
