"""
Catalog similarity on the four-network map
==========================================

Load the bundled NS map, print every server's catalog, then the pairwise
network and within-network server similarity as exact ratios.
"""

from itertools import combinations

from nsroute.catalog import (
    format_ratio,
    network_app_set,
    server_app_set,
    similarity_networks,
    similarity_servers,
    table1_topology,
)

nsmap = table1_topology()

# Each row is one network; each cell is one server's application set.
for net in nsmap.networks:
    cells = ["{" + ",".join(sorted(s.apps)) + "}" for s in net.servers]
    print(f"{net.id:3s} " + "  ".join(cells))

# A network's catalog is the union over its servers.
print()
for net in nsmap.networks:
    print(net.id, sorted(network_app_set(nsmap, net.id)))

# Pairwise network similarity. n2 and n3 host the same three applications.
print("\nnetwork pairs")
for a, b in combinations([n.id for n in nsmap.networks], 2):
    r = similarity_networks(network_app_set(nsmap, a), network_app_set(nsmap, b))
    print(f"  {a}-{b}: {format_ratio(r):>4s}  {float(r):.3f}")

# Server pairs inside n1: s3={App1,App4} and s4={App2,App3} share nothing.
print("\nserver pairs in n1")
ids = [s.id for s in nsmap.network("n1").servers]
for a, b in combinations(ids, 2):
    r = similarity_servers(server_app_set(nsmap, "n1", a), server_app_set(nsmap, "n1", b))
    print(f"  {a}-{b}: {format_ratio(r)}")
