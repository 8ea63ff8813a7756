"""Workload spec -> deterministic packet schedule + host-module mapping."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..graph import AppMapping, MappingEntry
from ..records import PacketRecord, Protocol, day_from_ts
from .topology import Topology

DEFAULT_SERVER_PORTS = {Protocol.TCP: 5001, Protocol.UDP: 5010}

DATA_LEN = {Protocol.TCP: 1400, Protocol.UDP: 1200,
            Protocol.ICMP: 84, Protocol.IGMP: 32, Protocol.ARP: 28}
ACK_LEN = {Protocol.TCP: 52, Protocol.UDP: 120,
           Protocol.ICMP: 84, Protocol.IGMP: 32, Protocol.ARP: 28}


@dataclass(frozen=True)
class WorkloadEntry:
    src: str
    dst: str
    channels: int
    proto: Protocol
    rate_pps: float
    start: float
    duration: float
    sessions: int = 1
    dst_port: Optional[int] = None
    app: Optional[str] = None
    server_app: Optional[str] = None
    bidirectional: bool = True
    anomaly_at: Optional[float] = None  # absolute time; forward rate jumps
    anomaly_factor: float = 10.0

    def resolved_port(self) -> Optional[int]:
        if self.dst_port is not None:
            return self.dst_port
        return DEFAULT_SERVER_PORTS.get(self.proto)

    def client_app(self) -> str:
        return self.app or f"client-{self.src}"

    def resolved_server_app(self) -> str:
        return self.server_app or f"server-{self.dst}"


def parse_workload(entries: list[dict]) -> list[WorkloadEntry]:
    out = []
    for e in entries:
        out.append(WorkloadEntry(
            src=e["src"], dst=e["dst"],
            channels=int(e.get("channels", 1)),
            proto=Protocol(e.get("proto", "TCP")),
            rate_pps=float(e["rate_pps"]),
            start=float(e.get("start", 0.0)),
            duration=float(e["duration"]),
            sessions=int(e.get("sessions", 1)),
            dst_port=e.get("dst_port"),
            app=e.get("app"),
            server_app=e.get("server_app"),
            bidirectional=bool(e.get("bidirectional", True)),
            anomaly_at=e.get("anomaly_at"),
            anomaly_factor=float(e.get("anomaly_factor", 10.0)),
        ))
    return out


@dataclass(frozen=True)
class ScheduledPacket:
    rec: PacketRecord
    src_host: str
    dst_host: str


def _mk_packet(ts: float, proto: Protocol, src, dst, src_port, dst_port,
               length: int, forward: bool) -> PacketRecord:
    src_addr, src_mac = src
    dst_addr, dst_mac = dst
    is_ip = proto is not Protocol.ARP
    return PacketRecord(
        ts=ts, day=day_from_ts(ts),
        src_mac=src_mac, dst_mac=dst_mac,
        eth_type=2054 if proto is Protocol.ARP else 2048,
        vlan_id=-1,
        src_ip=src_addr, dst_ip=dst_addr,
        proto=proto, ip_len=length,
        ttl=64 if is_ip else None,
        dscp=0 if is_ip else None,
        ecn=0 if is_ip else None,
        src_port=src_port, dst_port=dst_port,
        tcp_flags=(frozenset({"PSH", "ACK"}) if forward else frozenset({"ACK"}))
        if proto is Protocol.TCP else None,
        icmp_type=(8 if forward else 0) if proto is Protocol.ICMP else None,
        icmp_code=0 if proto is Protocol.ICMP else None,
        arp_op=(1 if forward else 2) if proto is Protocol.ARP else None,
    )


def build_schedule(entries: list[WorkloadEntry], topology: Topology,
                   seed: int) -> tuple[list[ScheduledPacket], AppMapping]:
    """Expand workload entries into a time-ordered packet schedule.

    The schedule is a pure function of (entries, topology, seed), so the
    zero-trust and baseline modes replay identical traffic.
    """
    rng = np.random.default_rng(seed)
    mapping = AppMapping()
    for host_id, att in topology.hosts.items():
        mapping.bind_address(att.addr, host_id)

    packets: list[tuple[float, int, ScheduledPacket]] = []
    seq = 0

    for entry in sorted(entries, key=lambda e: (e.start, e.src, e.dst)):
        src_att = topology.hosts[entry.src]
        dst_att = topology.hosts[entry.dst]
        src = (src_att.addr, src_att.mac)
        dst = (dst_att.addr, dst_att.mac)
        server_port = entry.resolved_port()
        has_ports = server_port is not None
        if has_ports:
            mapping.add(MappingEntry(
                ts=entry.start - 1.0, host_id=entry.dst,
                app_name=entry.resolved_server_app(), proto=entry.proto,
                local_port=server_port))
        session_span = entry.duration / entry.sessions
        for channel in range(entry.channels):
            stagger = 0.01 * (channel + 1)
            for session in range(entry.sessions):
                s_start = entry.start + session * session_span + stagger
                s_end = entry.start + (session + 1) * session_span
                src_port = int(rng.integers(30000, 60000)) if has_ports else None
                if has_ports:
                    mapping.add(MappingEntry(
                        ts=s_start - 0.005, host_id=entry.src,
                        app_name=entry.client_app(), proto=entry.proto,
                        local_port=src_port, remote_ip=dst_att.addr,
                        remote_port=server_port))
                step = 1.0 / entry.rate_pps
                t = s_start
                while t < s_end - 1e-9:
                    rate_mult = 1
                    if entry.anomaly_at is not None and t >= entry.anomaly_at:
                        rate_mult = max(1, int(round(entry.anomaly_factor)))
                    for burst in range(rate_mult):
                        ts = t + burst * (step / (rate_mult + 1))
                        packets.append((ts, seq, ScheduledPacket(
                            rec=_mk_packet(ts, entry.proto, src, dst, src_port,
                                           server_port, DATA_LEN[entry.proto],
                                           forward=True),
                            src_host=entry.src, dst_host=entry.dst)))
                        seq += 1
                    if entry.bidirectional:
                        ts = t + 0.4 * step
                        packets.append((ts, seq, ScheduledPacket(
                            rec=_mk_packet(ts, entry.proto, dst, src,
                                           server_port, src_port,
                                           ACK_LEN[entry.proto], forward=False),
                            src_host=entry.dst, dst_host=entry.src)))
                        seq += 1
                    t += step

    packets.sort(key=lambda item: (item[0], item[1]))
    return [sp for _, _, sp in packets], mapping
