"""Deterministic discrete-event simulation of an OpenFlow-style data plane.

Switches hold priority-ordered flow tables with per-rule counters and
idle/hard timers; unmatched packets escalate to a controller running
either the zero-trust pipeline, its training mode, or a reactive
forwarding baseline.
"""

from .flow_table import DEFAULT_COOKIE, FlowTable, InstalledRule
from .topology import Hop, HostAttachment, Topology
from .workload import ScheduledPacket, WorkloadEntry, build_schedule, parse_workload
from .controllers import (
    FwdController,
    PacketInResult,
    TrainController,
    ZtAssets,
    ZtController,
)
from .engine import Engine, ScenarioResult, SimMetrics, run_scenario

__all__ = [
    "DEFAULT_COOKIE", "FlowTable", "InstalledRule",
    "Hop", "HostAttachment", "Topology",
    "ScheduledPacket", "WorkloadEntry", "build_schedule", "parse_workload",
    "FwdController", "PacketInResult", "TrainController", "ZtAssets",
    "ZtController",
    "Engine", "ScenarioResult", "SimMetrics", "run_scenario",
]
