"""nsroute: similarity-routed, failure-tolerant job dispatch and its simulator."""

from .catalog import (
    NetworkRecord,
    NsMap,
    ServerRecord,
    load_topology,
    network_app_set,
    server_app_set,
    similarity_networks,
    similarity_servers,
    table1_topology,
    validate_topology,
)
from .dispatch import (
    AccessFrequencyTable,
    JobRequest,
    SelectionDecision,
    TransmissionQueue,
    UpdateMessage,
    dispatch,
    select_network,
    select_server,
)
from .sim import FaultPlan, Params, Simulation, replica_consistency, run_scenario

__version__ = "0.1.0"
