"""
Crash drill: monitoring and emergency load shift
================================================

One App4 job; the server chosen for it crashes while the job is running.
The monitor notices the missing output at the deadline and re-runs the job
on a sibling server. The trace and the log file tell the story.
"""

import tempfile
from pathlib import Path

from nsroute.catalog import table1_topology
from nsroute.dispatch import JobRequest, place
from nsroute.failover import serialize_log
from nsroute.sim import FaultPlan, Params, Simulation

params = Params(timeout_t=1000, interval_2=250)
req = JobRequest("j1", "alice", "10.20.30.40", "App4", b"plot(x)", 4, 0)

# Ask the router (on a scratch copy of the map) where the job will land.
first = place(table1_topology(), req)
print(f"job will run on {first.network}/{first.server}; crashing it at t=6")

with tempfile.TemporaryDirectory() as out:
    sim = Simulation(table1_topology(), [req], FaultPlan([(first.network, first.server, 6)]),
                     params, out_root=out)
    metrics = sim.run()

    print("\n".join(metrics.trace))
    print()
    print(serialize_log(sim.monitor.log).decode())
    print("stored:", sorted(p.name for p in (Path(out) / req.external_ip).iterdir()))

print(f"completed={metrics.jobs_completed} failovers={metrics.failovers} "
      f"finished at t={metrics.completion_times[0]}")
