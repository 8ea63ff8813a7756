"""Seeded synthetic corpora: application traces, attack traffic, and
flow-statistics streams with controllable rate structure.

These generators stand in for captured traffic at desk scale. Benign apps
draw header fields from stable per-app distributions; attack generators
produce the header and rate shapes of floods and port scans. Flow-stat
streams cycle through activity regimes with multiplicative jitter, the
way real flows ramp between busy and quiet periods.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .records import FlowStatSample, PacketRecord, Protocol, day_from_ts

# Tuesday 2023-11-14 22:13:20 UTC; any fixed anchor works.
BASE_TS = 1_700_000_000.0


@dataclass(frozen=True)
class AppProfile:
    """Header-field distributions of one synthetic client/server app pair.

    Header values are discrete with a few levels each, the way real app
    traffic looks (codec-fixed frame sizes, a stable TTL, steady-state
    flag sets); captures start mid-flow, so no handshake flags appear.
    """

    app_name: str
    client_ip: str
    server_ip: str
    client_mac: str
    server_mac: str
    proto: Protocol = Protocol.TCP
    server_port: int = 5001
    client_port_range: tuple[int, int] = (40000, 50000)
    ttl_choices: tuple[int, ...] = (63, 64)
    len_choices: tuple[tuple[int, float], ...] = ((200, 0.7), (220, 0.3))
    dscp: int = 0
    ecn: int = 0
    vlan_id: int = -1
    flag_sets: tuple[tuple[frozenset, float], ...] = (
        (frozenset({"ACK"}), 0.6),
        (frozenset({"PSH", "ACK"}), 0.4),
    )

    @property
    def eth_type(self) -> int:
        return 2054 if self.proto is Protocol.ARP else 2048


def _weighted_choice(pairs, rng: np.random.Generator):
    weights = np.array([w for _, w in pairs], dtype=float)
    idx = rng.choice(len(pairs), p=weights / weights.sum())
    return pairs[idx][0]


def gen_app_packets(profile: AppProfile, n: int, rng: np.random.Generator,
                    start_ts: float = BASE_TS,
                    packets_per_session: int = 750,
                    session_window: float = 300.0,
                    session_period: float = 86400.0) -> list[PacketRecord]:
    """Client-to-server packets from recurring activity sessions.

    The app runs one session per period (daily by default), sending
    packets_per_session packets inside a session_window burst from a fresh
    source port, so temporal features revisit the same band every period
    instead of drifting monotonically.
    """
    records = []
    is_tcp = profile.proto is Protocol.TCP
    session = -1
    ts = start_ts
    for i in range(n):
        if i % packets_per_session == 0:
            session += 1
            src_port = int(rng.integers(*profile.client_port_range))
            ts = start_ts + session * session_period
        ts += (session_window / packets_per_session) * float(rng.uniform(0.5, 1.5))
        records.append(PacketRecord(
            ts=ts,
            day=day_from_ts(ts),
            src_mac=profile.client_mac,
            dst_mac=profile.server_mac,
            eth_type=profile.eth_type,
            vlan_id=profile.vlan_id,
            src_ip=profile.client_ip,
            dst_ip=profile.server_ip,
            proto=profile.proto,
            ip_len=int(_weighted_choice(profile.len_choices, rng)),
            ttl=int(rng.choice(profile.ttl_choices)),
            dscp=profile.dscp,
            ecn=profile.ecn,
            src_port=src_port,
            dst_port=profile.server_port,
            tcp_flags=_weighted_choice(profile.flag_sets, rng) if is_tcp else None,
        ))
    return records


def gen_port_scan(target_profile: AppProfile, n: int, rng: np.random.Generator,
                  start_ts: float = BASE_TS) -> list[PacketRecord]:
    """SYN sweep across destination ports: tiny frames, scanner-typical TTL."""
    records = []
    ts = start_ts
    src_port = 54321
    for i in range(n):
        ts += float(rng.uniform(0.001, 0.01))
        records.append(PacketRecord(
            ts=ts,
            day=day_from_ts(ts),
            src_mac=target_profile.client_mac,
            dst_mac=target_profile.server_mac,
            eth_type=2048,
            vlan_id=target_profile.vlan_id,
            src_ip=target_profile.client_ip,
            dst_ip=target_profile.server_ip,
            proto=target_profile.proto,
            ip_len=40,
            ttl=42,
            dscp=0,
            ecn=0,
            src_port=src_port,
            dst_port=1 + (i % 1024),
            tcp_flags=frozenset({"SYN"}) if target_profile.proto is Protocol.TCP else None,
        ))
    return records


def gen_flood(target_profile: AppProfile, n: int, rng: np.random.Generator,
              start_ts: float = BASE_TS) -> list[PacketRecord]:
    """High-rate large-frame flood at the target port from churning ports."""
    records = []
    ts = start_ts
    for _ in range(n):
        ts += float(rng.uniform(0.0001, 0.001))
        records.append(PacketRecord(
            ts=ts,
            day=day_from_ts(ts),
            src_mac=target_profile.client_mac,
            dst_mac=target_profile.server_mac,
            eth_type=2048,
            vlan_id=target_profile.vlan_id,
            src_ip=target_profile.client_ip,
            dst_ip=target_profile.server_ip,
            proto=target_profile.proto,
            ip_len=1400,
            ttl=250,
            dscp=0,
            ecn=0,
            src_port=int(rng.integers(1024, 65535)),
            dst_port=target_profile.server_port,
            tcp_flags=frozenset({"SYN"}) if target_profile.proto is Protocol.TCP else None,
        ))
    return records


def rewrite_endpoints(records: Sequence[PacketRecord], src_ip: str, dst_ip: str,
                      src_mac: str, dst_mac: str,
                      src_port: Optional[int] = None,
                      dst_port: Optional[int] = None) -> list[PacketRecord]:
    """Re-address packets onto another edge, keeping all other headers.

    Mimics replaying foreign traffic as if it came from the modeled pair,
    so only the learned header distribution can tell them apart. Optional
    port overrides let the traffic assume the modeled app's identity under
    port-based attribution as well.
    """
    from dataclasses import replace
    out = []
    for r in records:
        kw = dict(src_ip=src_ip, dst_ip=dst_ip, src_mac=src_mac, dst_mac=dst_mac)
        if src_port is not None and r.src_port is not None:
            kw["src_port"] = src_port
        if dst_port is not None and r.dst_port is not None:
            kw["dst_port"] = dst_port
        out.append(replace(r, **kw))
    return out


def mapping_rows_for(records: Sequence[PacketRecord], app_name: str,
                     server_app: str) -> list[str]:
    """Host-module mapping rows reconstructed from a client-side trace:
    one row per source-port session plus one for the server binding."""
    if not records:
        return []
    first = records[0]
    rows = [f"{first.ts - 1.0},{first.dst_ip},{server_app},"
            f"{first.proto.value},{first.dst_port},,"]
    current_port = None
    for rec in records:
        if rec.src_port != current_port:
            current_port = rec.src_port
            rows.append(f"{rec.ts - 0.001},{rec.src_ip},{app_name},"
                        f"{rec.proto.value},{rec.src_port},"
                        f"{rec.dst_ip},{rec.dst_port}")
    return rows


def mapping_csv(rows: Sequence[str]) -> str:
    header = "ts,host_id,app_name,proto,local_port,remote_ip,remote_port"
    return "\n".join([header, *rows]) + "\n"


def two_app_profiles() -> tuple[AppProfile, AppProfile]:
    """Two same-stack apps with disjoint port, TTL, and length distributions."""
    app_a = AppProfile(
        app_name="telemetry-feed",
        client_ip="10.0.0.1", server_ip="10.0.0.2",
        client_mac="aa:00:00:00:00:01", server_mac="aa:00:00:00:00:02",
        server_port=5001,
        client_port_range=(40000, 50000),
        ttl_choices=(63, 64),
        len_choices=((200, 0.7), (220, 0.3)),
    )
    app_b = AppProfile(
        app_name="bulk-sync",
        client_ip="10.0.1.1", server_ip="10.0.1.2",
        client_mac="aa:00:00:00:01:01", server_mac="aa:00:00:00:01:02",
        server_port=7070,
        client_port_range=(20000, 30000),
        ttl_choices=(127, 128),
        len_choices=((1200, 0.8), (1250, 0.2)),
        flag_sets=((frozenset({"ACK"}), 1.0),),
    )
    return app_a, app_b


# ---------------------------------------------------------------------------
# Flow-statistics streams

REGIME_LEVELS = (0.3, 1.0, 1.7)


def gen_rate_series(n: int, nominal_rate: float, rng: np.random.Generator,
                    regime_levels: tuple[float, ...] = REGIME_LEVELS,
                    regime_len: int = 80,
                    jitter: float = 0.2,
                    scale: float = 1.0) -> np.ndarray:
    """Per-interval packet counts cycling through activity regimes.

    Each regime holds for regime_len intervals at level*nominal_rate with
    multiplicative per-sample jitter; ``scale`` shifts the whole stream
    (e.g. 0.36 for a bandwidth-reduced deployment).
    """
    levels = np.array([regime_levels[(i // regime_len) % len(regime_levels)]
                       for i in range(n)])
    noise = rng.uniform(1.0 - jitter, 1.0 + jitter, size=n)
    return nominal_rate * scale * levels * noise


def rates_to_samples(rates: np.ndarray, sampling_rate: float,
                     bytes_per_packet: float,
                     start_t: float = 0.0,
                     byte_jitter: Optional[np.ndarray] = None) -> list[FlowStatSample]:
    """Cumulative counter samples as a switch would report them."""
    pkt_cum = np.floor(np.cumsum(rates)).astype(int)
    byte_rates = rates * bytes_per_packet
    if byte_jitter is not None:
        byte_rates = byte_rates * byte_jitter
    byte_cum = np.floor(np.cumsum(byte_rates)).astype(int)
    return [FlowStatSample(t=start_t + i * sampling_rate,
                           packets_cum=int(pkt_cum[i]),
                           bytes_cum=int(byte_cum[i]))
            for i in range(len(rates))]


@dataclass
class FlowStreamSpec:
    """Parameters for one synthetic flow-statistics stream."""

    nominal_rate: float = 40.0  # packets per sampling interval
    bytes_per_packet: float = 600.0
    sampling_rate: float = 5.0
    regime_len: int = 80
    jitter: float = 0.2
    regime_levels: tuple[float, ...] = REGIME_LEVELS


def gen_flow_stream(spec: FlowStreamSpec, n: int, rng: np.random.Generator,
                    scale: float = 1.0,
                    flood_at: Optional[int] = None,
                    flood_factor: float = 10.0,
                    flood_bytes_per_packet: Optional[float] = None,
                    start_t: float = 0.0) -> list[FlowStatSample]:
    """Benign regime-cycling stream, optionally turning into a flood.

    ``flood_at`` is the sample index where the rate jumps by flood_factor;
    ``flood_bytes_per_packet`` reshapes frames from that point (e.g. scan
    probes are tiny).
    """
    rates = gen_rate_series(n, spec.nominal_rate, rng,
                            regime_levels=spec.regime_levels,
                            regime_len=spec.regime_len,
                            jitter=spec.jitter,
                            scale=scale)
    bpp = np.full(n, spec.bytes_per_packet)
    if flood_at is not None:
        rates[flood_at:] *= flood_factor
        if flood_bytes_per_packet is not None:
            bpp[flood_at:] = flood_bytes_per_packet
    pkt_cum = np.floor(np.cumsum(rates)).astype(int)
    byte_cum = np.floor(np.cumsum(rates * bpp)).astype(int)
    return [FlowStatSample(t=start_t + i * spec.sampling_rate,
                           packets_cum=int(pkt_cum[i]),
                           bytes_cum=int(byte_cum[i]))
            for i in range(n)]


# ---------------------------------------------------------------------------
# Bidirectional bandwidth-test corpus (random client ports, fixed server port)

@dataclass
class IperfCorpus:
    forward: list[PacketRecord]
    reverse: list[PacketRecord]
    mapping_rows: list[str] = field(default_factory=list)

    @property
    def merged(self) -> list[PacketRecord]:
        return sorted(self.forward + self.reverse, key=lambda r: r.ts)

    def mapping_csv(self) -> str:
        header = "ts,host_id,app_name,proto,local_port,remote_ip,remote_port"
        return "\n".join([header] + self.mapping_rows) + "\n"


def gen_iperf_corpus(rng: np.random.Generator,
                     n_per_channel: int = 800,
                     channels: int = 2,
                     client_ip: str = "10.0.0.1",
                     server_ip: str = "10.0.0.2",
                     server_port: int = 5001,
                     proto: Protocol = Protocol.TCP,
                     start_ts: float = BASE_TS,
                     rate_pps: float = 40.0) -> IperfCorpus:
    """Bandwidth-test style traffic: per-channel random client source ports
    toward one fixed server port, with a reverse stream per channel."""
    client_mac = "aa:00:00:00:00:01"
    server_mac = "aa:00:00:00:00:02"
    is_tcp = proto is Protocol.TCP
    forward: list[PacketRecord] = []
    reverse: list[PacketRecord] = []
    mapping_rows = [
        f"{start_ts - 1.0},{server_ip},iperf-server,{proto.value},{server_port},,",
    ]
    for ch in range(channels):
        src_port = int(rng.integers(30000, 60000))
        mapping_rows.append(
            f"{start_ts - 0.5},{client_ip},iperf-client,{proto.value},{src_port},{server_ip},{server_port}")
        for i in range(n_per_channel):
            t = start_ts + (i + ch / (channels + 1.0)) / rate_pps
            forward.append(PacketRecord(
                ts=t, day=day_from_ts(t),
                src_mac=client_mac, dst_mac=server_mac,
                eth_type=2048, vlan_id=-1,
                src_ip=client_ip, dst_ip=server_ip, proto=proto,
                ip_len=1400,  # MTU-sized bulk segments
                ttl=64, dscp=0, ecn=0,
                src_port=src_port, dst_port=server_port,
                tcp_flags=frozenset({"PSH", "ACK"}) if is_tcp else None,
            ))
            t_rev = t + 0.4 / rate_pps
            reverse.append(PacketRecord(
                ts=t_rev, day=day_from_ts(t_rev),
                src_mac=server_mac, dst_mac=client_mac,
                eth_type=2048, vlan_id=-1,
                src_ip=server_ip, dst_ip=client_ip, proto=proto,
                ip_len=52,  # bare acknowledgments
                ttl=64, dscp=0, ecn=0,
                src_port=server_port, dst_port=src_port,
                tcp_flags=frozenset({"ACK"}) if is_tcp else None,
            ))
    forward.sort(key=lambda r: r.ts)
    reverse.sort(key=lambda r: r.ts)
    return IperfCorpus(forward=forward, reverse=reverse, mapping_rows=mapping_rows)


def write_demo_corpus(out_dir: str, seed: int = 7,
                      n_per_channel: int = 2000) -> None:
    """Write a small ready-to-train corpus (trace + mapping) to a directory."""
    import pathlib

    from .records import serialize_trace

    rng = np.random.default_rng(seed)
    corpus = gen_iperf_corpus(rng, n_per_channel=n_per_channel)
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(serialize_trace(corpus.merged))
    (out / "mapping.csv").write_text(corpus.mapping_csv())


if __name__ == "__main__":
    import sys

    write_demo_corpus(sys.argv[1] if len(sys.argv) > 1 else "demo-corpus")
