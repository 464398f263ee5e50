"""
The four protocol roles, byte by byte
=====================================

IP_SEND encodes the job, IP_RECEIVE decodes and executes it, OP_SEND returns
the staged files plus a status line, OP_RECEIVE stores them under the
client's external IP and releases the server.
"""

import tempfile

from nsroute.catalog import table1_topology
from nsroute.dispatch import AccessFrequencyTable, JobRequest, dispatch
from nsroute.protocol import (
    JobEnvelope,
    StatusLine,
    decode_job,
    decode_results,
    encode_job,
    op_send,
    release_server,
    run_job,
    store_outputs,
)

nsmap = table1_topology()
req = JobRequest("j1", "alice", "10.20.30.40", "App1", b"print(gcf,'-djpeg','normfar dB.jpg');\n", 4)
decision, _ = dispatch(nsmap, req, AccessFrequencyTable())

# IP_SEND
env = JobEnvelope(req.job_id, req.external_ip, req.app, decision.network, decision.server,
                  req.n_files, req.payload)
frame = encode_job(env)
print(frame)

# IP_RECEIVE: outputs go to the server's scratch area
scratch = {}
run_job(decode_job(frame), scratch=scratch)

# OP_SEND: scratch is emptied once the frame is built
results = op_send(scratch, req.job_id, StatusLine(req.app, decision.network, decision.server))
print(results.decode())
assert scratch == {}

# OP_RECEIVE
files, status = decode_results(results)
with tempfile.TemporaryDirectory() as root:
    for path in store_outputs(root, req.external_ip, files):
        print(path.relative_to(root))
release_server(nsmap, status)
print("released", status, "busy =", nsmap.server(status.network, status.server).busy)
