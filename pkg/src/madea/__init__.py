"""Malware detection for desk-scale IoT deployments.

Whitelist traffic profiles are trained per device from benign captures,
every live packet is matched against them in real time, and suspicious
packets trigger signed challenge-response attestation of the flagged
device: a healthy device teaches the new traffic to the whitelist, an
unhealthy one raises a confirmed-infection alert.
"""

from .attestation import (
    AgentServer,
    AttestationReport,
    AttestationRequest,
    DeviceAgent,
    Divergence,
    DivergenceKind,
    Health,
    LoopbackTransport,
    ReferenceMeasurement,
    TcpTransport,
    Verifier,
    attest,
    decode_msg,
    encode_msg,
    generate_keypair,
    measure,
    read_process_dir,
    reference_of,
    verify_report,
)
from .errors import MadeaError
from .monitoring import (
    MatchMode,
    Outcome,
    Reason,
    Verdict,
    match_entry,
    monitor_stream,
    name_similarity,
    registrable_domain,
    write_verdicts,
)
from .orchestrator import (
    Alert,
    Orchestrator,
    PipelineResult,
    RateLimiter,
    accept_reference,
    run_pipeline,
)
from .pcap import DnsResponse, PacketRecord, Transport, read_pcap, write_pcap
from .dns import parse_dns_response
from .profiling import (
    DeviceProfile,
    Direction,
    HostnameMap,
    NetworkConfig,
    ProfileEntry,
    ProfileStore,
    Profiler,
    build_entry,
    external_address_of,
    is_config_packet,
    load_config,
    load_profiles,
    resolve_direction,
    save_profiles,
    train,
)
from .reporting import (
    DeviceRates,
    EnergyModel,
    LatencyReport,
    StorageBound,
    bench_latency,
    bound_from_aggregates,
    compute_rates,
    energy_projection,
    length_histogram,
    storage_bound,
)
from .tracegen import FlowSpec, generate_trace, labeled_trace

__version__ = "0.1.0"
