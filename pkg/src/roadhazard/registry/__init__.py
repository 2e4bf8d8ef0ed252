"""Shared obstacle registry: records, wire protocol, server and client."""

from .client import RegistryClient, RegistryError, ReplayReport, agent_replay, report_for
from .eventlog import EventLog, load_state, read_events
from .protocol import ProtocolError, decode, encode
from .records import (
    Box,
    Decision,
    ObstacleRecord,
    RegistryConfig,
    RegistryState,
    Report,
    ReportError,
    WireDescriptor,
    apply_report,
    decide_update,
    match_record,
    query_vicinity,
    replay_events,
)
from .server import Registry, RegistryServer, serve

__all__ = [
    "Box", "Decision", "EventLog", "ObstacleRecord", "ProtocolError", "Registry", "RegistryClient",
    "RegistryConfig", "RegistryError", "RegistryServer", "RegistryState", "ReplayReport", "Report",
    "ReportError", "WireDescriptor", "agent_replay", "apply_report", "decide_update", "decode", "encode",
    "load_state", "match_record", "query_vicinity", "read_events", "replay_events", "report_for", "serve",
]
