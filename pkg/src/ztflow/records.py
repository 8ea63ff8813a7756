"""Packet/flow-stat records, trace parsing, feature extraction, and scaling.

The trace format is a line-oriented CSV (header row required)::

    ts,day,src_mac,dst_mac,eth_type,vlan_id,src_ip,dst_ip,proto,ttl,
    ip_len,dscp,ecn,src_port,dst_port,tcp_flags,icmp_type,icmp_code,arp_op

An empty cell means the field is absent; ``tcp_flags`` is a ``|``-joined
flag-name set; an empty ``day`` is derived from ``ts`` (UTC).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Iterator, Optional

import numpy as np

TRACE_COLUMNS = (
    "ts", "day", "src_mac", "dst_mac", "eth_type", "vlan_id", "src_ip",
    "dst_ip", "proto", "ttl", "ip_len", "dscp", "ecn", "src_port",
    "dst_port", "tcp_flags", "icmp_type", "icmp_code", "arp_op",
)

# Canonical order for serializing flag sets.
TCP_FLAGS = ("FIN", "SYN", "RST", "PSH", "ACK", "URG", "ECE", "CWR")

SECONDS_PER_DAY = 86400


class Protocol(Enum):
    ARP = "ARP"
    ICMP = "ICMP"
    IGMP = "IGMP"
    TCP = "TCP"
    UDP = "UDP"
    OTHER = "OTHER"


_IP_PROTOCOLS = frozenset({Protocol.ICMP, Protocol.IGMP, Protocol.TCP, Protocol.UDP})
_TRANSPORT_PROTOCOLS = frozenset({Protocol.TCP, Protocol.UDP})


class TraceParseError(ValueError):
    """Malformed or invariant-violating trace input."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class UnsupportedStackError(ValueError):
    """The record's protocol stack is not modeled."""


class SchemaMismatchError(ValueError):
    """Feature vector does not match the expected schema."""


@dataclass(frozen=True)
class ProtocolStack:
    """Ordered protocol layers of a packet, e.g. ETHERNET -> IP -> TCP."""

    layers: tuple[str, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("protocol stack must be non-empty")

    @property
    def name(self) -> str:
        return "_".join(self.layers)

    @classmethod
    def from_name(cls, name: str) -> "ProtocolStack":
        return cls(tuple(name.split("_")))

    def __str__(self) -> str:
        return self.name


ETHERNET_ARP = ProtocolStack(("ETHERNET", "ARP"))
ETHERNET_IP_ICMP = ProtocolStack(("ETHERNET", "IP", "ICMP"))
ETHERNET_IP_IGMP = ProtocolStack(("ETHERNET", "IP", "IGMP"))
ETHERNET_IP_TCP = ProtocolStack(("ETHERNET", "IP", "TCP"))
ETHERNET_IP_UDP = ProtocolStack(("ETHERNET", "IP", "UDP"))

_STACK_BY_PROTOCOL = {
    Protocol.ARP: ETHERNET_ARP,
    Protocol.ICMP: ETHERNET_IP_ICMP,
    Protocol.IGMP: ETHERNET_IP_IGMP,
    Protocol.TCP: ETHERNET_IP_TCP,
    Protocol.UDP: ETHERNET_IP_UDP,
}


@dataclass(frozen=True)
class PacketRecord:
    """One parsed packet header plus its temporal context."""

    ts: float
    day: int
    src_mac: str
    dst_mac: str
    eth_type: int
    vlan_id: int
    src_ip: str
    dst_ip: str
    proto: Protocol
    ip_len: int
    ttl: Optional[int] = None
    dscp: Optional[int] = None
    ecn: Optional[int] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    tcp_flags: Optional[frozenset[str]] = None
    icmp_type: Optional[int] = None
    icmp_code: Optional[int] = None
    arp_op: Optional[int] = None

    @property
    def time_of_day(self) -> float:
        return self.ts % SECONDS_PER_DAY


@dataclass(frozen=True)
class FeatureVector:
    """Numeric view of a record; schema is fixed per protocol stack."""

    values: tuple[float, ...]
    schema: tuple[str, ...]

    def __post_init__(self):
        if len(self.values) != len(self.schema):
            raise SchemaMismatchError(
                f"{len(self.values)} values vs {len(self.schema)} schema entries"
            )


@dataclass(frozen=True)
class FlowStatSample:
    """Cumulative rule counters observed at one query instant."""

    t: float
    packets_cum: int
    bytes_cum: int


def day_from_ts(ts: float) -> int:
    """Weekday 0-6 (Monday=0) of ts interpreted as seconds since epoch, UTC."""
    return datetime.fromtimestamp(ts, tz=timezone.utc).weekday()


def infer_stack(rec: PacketRecord) -> ProtocolStack:
    """Protocol stack implied by the record's transport/network protocol."""
    stack = _STACK_BY_PROTOCOL.get(rec.proto)
    if stack is None:
        raise UnsupportedStackError(f"unsupported protocol {rec.proto.value}")
    return stack


def _parse_int(raw: str, field: str, line_no: int) -> int:
    try:
        return int(raw)
    except ValueError:
        raise TraceParseError(f"field {field!r}: not an integer: {raw!r}", line_no)


def _parse_opt_int(raw: str, field: str, line_no: int) -> Optional[int]:
    return None if raw == "" else _parse_int(raw, field, line_no)


def _parse_flags(raw: str, line_no: int) -> frozenset[str]:
    if raw == "":
        return frozenset()
    flags = raw.split("|")
    unknown = [f for f in flags if f not in TCP_FLAGS]
    if unknown:
        raise TraceParseError(f"unknown TCP flags {unknown}", line_no)
    return frozenset(flags)


def _validate_fields(rec: PacketRecord, line_no: Optional[int]) -> None:
    proto = rec.proto

    def require(cond: bool, msg: str):
        if not cond:
            raise TraceParseError(msg, line_no)

    require(0 <= rec.day <= 6, f"day {rec.day} out of range 0-6")
    if proto in _IP_PROTOCOLS:
        require(rec.ttl is not None, f"{proto.value} record missing ttl")
        require(rec.dscp is not None and rec.ecn is not None,
                f"{proto.value} record missing dscp/ecn")
    else:
        require(rec.ttl is None and rec.dscp is None and rec.ecn is None,
                f"{proto.value} record carries IP-only fields")
    if proto in _TRANSPORT_PROTOCOLS:
        require(rec.src_port is not None and rec.dst_port is not None,
                f"{proto.value} record missing ports")
        for port in (rec.src_port, rec.dst_port):
            require(0 <= port <= 65535, f"port {port} out of range")
    else:
        require(rec.src_port is None and rec.dst_port is None,
                f"{proto.value} record carries ports")
    require((rec.tcp_flags is not None) == (proto is Protocol.TCP),
            "tcp_flags present iff proto is TCP")
    require((rec.icmp_type is not None and rec.icmp_code is not None)
            == (proto is Protocol.ICMP),
            "icmp fields present iff proto is ICMP")
    require((rec.arp_op is not None) == (proto is Protocol.ARP),
            "arp_op present iff proto is ARP")


def parse_record(row: dict[str, str], line_no: Optional[int] = None) -> PacketRecord:
    """Build and validate a PacketRecord from one CSV row (column -> cell)."""
    try:
        ts = float(row["ts"])
    except ValueError:
        raise TraceParseError(f"bad timestamp {row['ts']!r}", line_no)
    day_raw = row["day"]
    day = day_from_ts(ts) if day_raw == "" else _parse_int(day_raw, "day", line_no)
    try:
        proto = Protocol(row["proto"])
    except ValueError:
        raise TraceParseError(f"unknown protocol {row['proto']!r}", line_no)
    flags_raw = row["tcp_flags"]
    rec = PacketRecord(
        ts=ts,
        day=day,
        src_mac=row["src_mac"],
        dst_mac=row["dst_mac"],
        eth_type=_parse_int(row["eth_type"], "eth_type", line_no),
        vlan_id=_parse_int(row["vlan_id"], "vlan_id", line_no),
        src_ip=row["src_ip"],
        dst_ip=row["dst_ip"],
        proto=proto,
        ip_len=_parse_int(row["ip_len"], "ip_len", line_no),
        ttl=_parse_opt_int(row["ttl"], "ttl", line_no),
        dscp=_parse_opt_int(row["dscp"], "dscp", line_no),
        ecn=_parse_opt_int(row["ecn"], "ecn", line_no),
        src_port=_parse_opt_int(row["src_port"], "src_port", line_no),
        dst_port=_parse_opt_int(row["dst_port"], "dst_port", line_no),
        tcp_flags=_parse_flags(flags_raw, line_no) if proto is Protocol.TCP else (
            None if flags_raw == "" else _raise_flags(line_no)),
        icmp_type=_parse_opt_int(row["icmp_type"], "icmp_type", line_no),
        icmp_code=_parse_opt_int(row["icmp_code"], "icmp_code", line_no),
        arp_op=_parse_opt_int(row["arp_op"], "arp_op", line_no),
    )
    _validate_fields(rec, line_no)
    return rec


def _raise_flags(line_no: Optional[int]):
    raise TraceParseError("tcp_flags set on a non-TCP record", line_no)


def parse_trace(source: Iterable[str]) -> list[PacketRecord]:
    """Parse a packet-trace CSV stream into records, preserving order.

    Timestamps must be non-decreasing; violations and malformed lines are
    rejected with the offending line number.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise TraceParseError("missing header row", 1)
    header = [h.strip() for h in header]
    missing = [c for c in TRACE_COLUMNS if c not in header]
    if missing:
        raise TraceParseError(f"header missing columns {missing}", 1)
    index = {c: header.index(c) for c in TRACE_COLUMNS}

    records: list[PacketRecord] = []
    prev_ts: Optional[float] = None
    for line_no, cells in enumerate(reader, start=2):
        if not cells or (len(cells) == 1 and cells[0].strip() == ""):
            continue
        if len(cells) < len(header):
            raise TraceParseError(
                f"expected {len(header)} cells, got {len(cells)}", line_no)
        row = {c: cells[index[c]].strip() for c in TRACE_COLUMNS}
        rec = parse_record(row, line_no)
        if prev_ts is not None and rec.ts < prev_ts:
            raise TraceParseError(
                f"timestamp {rec.ts} decreases below previous {prev_ts}", line_no)
        prev_ts = rec.ts
        records.append(rec)
    return records


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Protocol):
        return value.value
    if isinstance(value, frozenset):
        return "|".join(f for f in TCP_FLAGS if f in value)
    if isinstance(value, float):
        return str(value)
    return str(value)


def serialize_record(rec: PacketRecord) -> str:
    """Canonical CSV line for a record (inverse of parse for canonical input)."""
    return ",".join(_fmt(getattr(rec, col)) for col in TRACE_COLUMNS)


def serialize_trace(records: Iterable[PacketRecord]) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    lines.extend(serialize_record(r) for r in records)
    return "\n".join(lines) + "\n"


# Per-stack feature schemas. Addresses select the CR edge and are excluded;
# checksums/sequence numbers carry no distributional signal and are not
# parsed at all.
_BASE_FEATURES = ("day", "time_of_day")
_IP_FEATURES = ("ttl", "ip_len", "dscp", "ecn")
_PORT_FEATURES = ("src_port", "dst_port")
_FLAG_FEATURES = tuple(f"flag_{f.lower()}" for f in TCP_FLAGS)

FEATURE_SCHEMAS: dict[str, tuple[str, ...]] = {
    ETHERNET_ARP.name: _BASE_FEATURES + ("arp_op",),
    ETHERNET_IP_ICMP.name: _BASE_FEATURES + _IP_FEATURES + ("icmp_type", "icmp_code"),
    ETHERNET_IP_IGMP.name: _BASE_FEATURES + _IP_FEATURES,
    ETHERNET_IP_TCP.name: _BASE_FEATURES + _IP_FEATURES + _PORT_FEATURES + _FLAG_FEATURES,
    ETHERNET_IP_UDP.name: _BASE_FEATURES + _IP_FEATURES + _PORT_FEATURES,
}


def feature_schema(stack: ProtocolStack) -> tuple[str, ...]:
    try:
        return FEATURE_SCHEMAS[stack.name]
    except KeyError:
        raise UnsupportedStackError(f"no feature schema for stack {stack.name}")


def preprocess(rec: PacketRecord) -> FeatureVector:
    """Numeric feature vector for a record, per its stack's fixed schema.

    TCP flags are one-hot encoded; day and time-of-day carry the temporal
    context so recurring daily behavior is learnable.
    """
    stack = infer_stack(rec)
    schema = feature_schema(stack)
    values: list[float] = [float(rec.day), rec.time_of_day]
    if rec.proto in _IP_PROTOCOLS:
        values += [float(rec.ttl), float(rec.ip_len), float(rec.dscp), float(rec.ecn)]
    if rec.proto is Protocol.ICMP:
        values += [float(rec.icmp_type), float(rec.icmp_code)]
    if rec.proto in _TRANSPORT_PROTOCOLS:
        values += [float(rec.src_port), float(rec.dst_port)]
    if rec.proto is Protocol.TCP:
        values += [1.0 if f in rec.tcp_flags else 0.0 for f in TCP_FLAGS]
    if rec.proto is Protocol.ARP:
        values += [float(rec.arp_op)]
    return FeatureVector(tuple(values), schema)


class Scaler:
    """Standard scaler: removes the mean and scales to unit variance.

    Zero-variance features are mapped to 0 instead of dividing by zero.
    """

    def __init__(self, means: np.ndarray, stds: np.ndarray, schema: tuple[str, ...]):
        self.means = np.asarray(means, dtype=float)
        self.stds = np.asarray(stds, dtype=float)
        self.schema = tuple(schema)
        if self.means.shape != self.stds.shape or len(self.means) != len(self.schema):
            raise SchemaMismatchError("scaler parameter shapes disagree")
        if np.any(self.stds < 0):
            raise ValueError("negative std")

    def transform_array(self, x: np.ndarray) -> np.ndarray:
        out = x - self.means
        nz = self.stds > 0
        out[..., nz] /= self.stds[nz]
        out[..., ~nz] = 0.0
        return out

    def inverse_array(self, x: np.ndarray) -> np.ndarray:
        return x * self.stds + self.means

    def to_dict(self) -> dict:
        return {
            "schema": list(self.schema),
            "means": [float(v) for v in self.means],
            "stds": [float(v) for v in self.stds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["means"]), np.array(d["stds"]), tuple(d["schema"]))


def fit_scaler(data: list[FeatureVector]) -> Scaler:
    """Fit per-feature mean/std (population std, matching unit-variance scaling)."""
    if not data:
        raise ValueError("cannot fit scaler on empty dataset")
    schema = data[0].schema
    for v in data:
        if v.schema != schema:
            raise SchemaMismatchError("mixed schemas in scaler input")
    mat = np.array([v.values for v in data], dtype=float)
    return Scaler(mat.mean(axis=0), mat.std(axis=0), schema)


def scale(s: Scaler, v: FeatureVector) -> FeatureVector:
    if v.schema != s.schema:
        raise SchemaMismatchError("vector schema does not match scaler schema")
    out = s.transform_array(np.array(v.values, dtype=float))
    return FeatureVector(tuple(float(x) for x in out), v.schema)


def stats_from_records(records: Iterable[PacketRecord],
                       sampling_rate: float,
                       start: Optional[float] = None,
                       end: Optional[float] = None) -> list[FlowStatSample]:
    """Cumulative (packets, bytes) series sampled every ``sampling_rate`` seconds.

    Desk-scale stand-in for switch counter queries: buckets a packet stream
    into the cumulative counters a per-edge rule set would have reported.
    """
    recs = list(records)
    if not recs and start is None:
        return []
    t0 = start if start is not None else recs[0].ts
    t_end = end if end is not None else (recs[-1].ts if recs else t0)
    samples: list[FlowStatSample] = []
    pkts = 0
    byts = 0
    i = 0
    t = t0
    while t <= t_end + 1e-9:
        while i < len(recs) and recs[i].ts <= t:
            pkts += 1
            byts += recs[i].ip_len
            i += 1
        samples.append(FlowStatSample(t=t, packets_cum=pkts, bytes_cum=byts))
        t += sampling_rate
    return samples


def parse_flow_stats(source: Iterable[str]) -> list[FlowStatSample]:
    """Parse a flow-stats CSV (``t,packets_cum,bytes_cum``) stream."""
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    samples = []
    for line_no, row in enumerate(reader, start=2):
        try:
            samples.append(FlowStatSample(
                t=float(row["t"]),
                packets_cum=int(row["packets_cum"]),
                bytes_cum=int(row["bytes_cum"]),
            ))
        except (KeyError, TypeError, ValueError):
            raise TraceParseError(f"bad flow-stat row {row!r}", line_no)
    return samples


def serialize_flow_stats(samples: Iterable[FlowStatSample]) -> str:
    lines = ["t,packets_cum,bytes_cum"]
    lines.extend(f"{_fmt(s.t)},{s.packets_cum},{s.bytes_cum}" for s in samples)
    return "\n".join(lines) + "\n"


def iter_labeled_trace(source: Iterable[str]) -> Iterator[tuple[PacketRecord, str]]:
    """Parse a trace CSV carrying an extra ``label`` column (benign/abnormal).

    Labels are evaluation metadata only; they never reach the models.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    header = [h.strip() for h in next(reader)]
    if "label" not in header:
        raise TraceParseError("labeled trace requires a 'label' column", 1)
    index = {c: header.index(c) for c in TRACE_COLUMNS}
    label_idx = header.index("label")
    prev_ts = None
    for line_no, cells in enumerate(reader, start=2):
        if not cells or (len(cells) == 1 and cells[0].strip() == ""):
            continue
        row = {c: cells[index[c]].strip() for c in TRACE_COLUMNS}
        rec = parse_record(row, line_no)
        if prev_ts is not None and rec.ts < prev_ts:
            raise TraceParseError(
                f"timestamp {rec.ts} decreases below previous {prev_ts}", line_no)
        prev_ts = rec.ts
        yield rec, cells[label_idx].strip()
