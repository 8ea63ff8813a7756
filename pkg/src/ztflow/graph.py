"""Communication-requirements graph: entities, protocol-stack edges, datasets.

Nodes are (host, application) entities; a directed edge exists per
(source entity, destination entity, protocol stack) and owns the packet
and flow-statistics datasets collected for that stream.
"""

from __future__ import annotations

import bisect
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .records import (
    FlowStatSample,
    PacketRecord,
    Protocol,
    ProtocolStack,
    infer_stack,
)

GRAPH_FORMAT_VERSION = 1

UNKNOWN_SERVICE = "unknown-service"
DEVICE_APP = "device"


@dataclass(frozen=True)
class Entity:
    host_id: str
    app_name: str

    def __str__(self) -> str:
        return f"{self.host_id}/{self.app_name}"


EdgeKey = tuple[Entity, Entity, str]


@dataclass(frozen=True)
class MappingEntry:
    """One host-module update: an app bound a local port at some instant."""

    ts: float
    host_id: str
    app_name: str
    proto: Protocol
    local_port: Optional[int]
    remote_ip: Optional[str] = None
    remote_port: Optional[int] = None


class AppMapping:
    """Resolves packet endpoints to entities.

    Keeps a host-id binding per address plus time-ordered port-binding
    entries; the latest entry with ts <= packet ts wins, and a mapping
    only expires when superseded by a later binding of the same port.
    """

    def __init__(self, entries: Iterable[MappingEntry] = (),
                 address_bindings: Optional[dict[str, str]] = None):
        self._by_binding: dict[tuple[str, str, int], list[tuple[float, str]]] = {}
        self.address_bindings = dict(address_bindings or {})
        for e in entries:
            self.add(e)

    def add(self, entry: MappingEntry) -> None:
        if entry.local_port is None:
            return
        key = (entry.host_id, entry.proto.value, entry.local_port)
        seq = self._by_binding.setdefault(key, [])
        bisect.insort(seq, (entry.ts, entry.app_name))

    def bind_address(self, addr: str, host_id: str) -> None:
        self.address_bindings[addr] = host_id

    def host_for(self, addr: str) -> str:
        return self.address_bindings.get(addr, addr)

    def resolve(self, addr: str, port: Optional[int], proto: Protocol,
                ts: float) -> Entity:
        host = self.host_for(addr)
        if port is None:
            return Entity(host, DEVICE_APP)
        seq = self._by_binding.get((host, proto.value, port))
        if seq:
            idx = bisect.bisect_right(seq, (ts, chr(0x10FFFF))) - 1
            if idx >= 0:
                return Entity(host, seq[idx][1])
        return Entity(host, f"{UNKNOWN_SERVICE}:{proto.value.lower()}:{port}")

    @classmethod
    def from_csv(cls, source: Iterable[str]) -> "AppMapping":
        import csv
        import io
        if isinstance(source, str):
            source = io.StringIO(source)
        mapping = cls()
        reader = csv.DictReader(source)
        for row in reader:
            mapping.add(MappingEntry(
                ts=float(row["ts"]),
                host_id=row["host_id"].strip(),
                app_name=row["app_name"].strip(),
                proto=Protocol(row["proto"].strip()),
                local_port=int(row["local_port"]) if row["local_port"].strip() else None,
                remote_ip=row.get("remote_ip", "").strip() or None,
                remote_port=int(row["remote_port"]) if row.get("remote_port", "").strip() else None,
            ))
        return mapping


@dataclass
class CrEdge:
    """One directed traffic stream between two entities over one stack."""

    src: Entity
    dst: Entity
    stack: ProtocolStack
    packet_dataset: list[PacketRecord] = field(default_factory=list)
    flow_stats: list[FlowStatSample] = field(default_factory=list)
    arl: Optional[object] = None
    rtfsl: Optional[object] = None

    @property
    def key(self) -> EdgeKey:
        return (self.src, self.dst, self.stack.name)

    def modal_addresses(self) -> tuple[str, str]:
        """Most frequent (src_ip, dst_ip) over the packet dataset."""
        if not self.packet_dataset:
            raise ValueError("edge has no packets")
        pairs = Counter((r.src_ip, r.dst_ip) for r in self.packet_dataset)
        return pairs.most_common(1)[0][0]


class CrGraph:
    def __init__(self):
        self.nodes: set[Entity] = set()
        self.edges: dict[EdgeKey, CrEdge] = {}

    def observe(self, rec: PacketRecord, mapping: AppMapping) -> EdgeKey:
        """Attribute a packet to its edge, creating nodes/edge as needed."""
        stack = infer_stack(rec)
        src = mapping.resolve(rec.src_ip, rec.src_port, rec.proto, rec.ts)
        dst = mapping.resolve(rec.dst_ip, rec.dst_port, rec.proto, rec.ts)
        key = (src, dst, stack.name)
        edge = self.edges.get(key)
        if edge is None:
            edge = CrEdge(src=src, dst=dst, stack=stack)
            self.edges[key] = edge
            self.nodes.add(src)
            self.nodes.add(dst)
        edge.packet_dataset.append(rec)
        return key

    def lookup(self, src: Entity, dst: Entity,
               stack: ProtocolStack) -> Optional[CrEdge]:
        """Exact-key query; absent means the access was never modeled."""
        return self.edges.get((src, dst, stack.name))

    def edges_of(self, app: Entity) -> list[CrEdge]:
        """All streams for which the app is a source or a sink."""
        return [e for e in self.edges.values() if e.src == app or e.dst == app]

    def total_packets(self) -> int:
        return sum(len(e.packet_dataset) for e in self.edges.values())


def aggregate_stats(rules: Iterable[tuple[int, int]]) -> tuple[int, int]:
    """Componentwise sum of per-rule (packets, bytes) counters at one instant."""
    packets = 0
    byts = 0
    for p, b in rules:
        packets += p
        byts += b
    return packets, byts


def edge_slug(key: EdgeKey) -> str:
    """Filesystem-safe, deterministic identifier for an edge key."""
    import hashlib
    src, dst, stack = key
    raw = f"{src.host_id}|{src.app_name}|{dst.host_id}|{dst.app_name}|{stack}"
    digest = hashlib.sha1(raw.encode()).hexdigest()[:10]
    safe = "".join(c if c.isalnum() or c in "-." else "-" for c in raw)
    return f"{safe[:80]}-{digest}"


def graph_to_dict(graph: CrGraph,
                  dataset_refs: Optional[dict[EdgeKey, dict]] = None) -> dict:
    """Versioned JSON document: nodes array + edges array with file refs."""
    nodes = sorted(graph.nodes, key=lambda n: (n.host_id, n.app_name))
    edges = []
    for key in sorted(graph.edges, key=lambda k: (str(k[0]), str(k[1]), k[2])):
        edge = graph.edges[key]
        refs = (dataset_refs or {}).get(key, {})
        edges.append({
            "src": {"host_id": edge.src.host_id, "app_name": edge.src.app_name},
            "dst": {"host_id": edge.dst.host_id, "app_name": edge.dst.app_name},
            "stack": edge.stack.name,
            "packets": len(edge.packet_dataset),
            "flow_stat_samples": len(edge.flow_stats),
            "files": refs,
        })
    return {
        "version": GRAPH_FORMAT_VERSION,
        "nodes": [{"host_id": n.host_id, "app_name": n.app_name} for n in nodes],
        "edges": edges,
    }


def graph_from_dict(doc: dict) -> tuple[CrGraph, dict[EdgeKey, dict]]:
    if doc.get("version") != GRAPH_FORMAT_VERSION:
        raise ValueError(f"unsupported graph document version {doc.get('version')}")
    graph = CrGraph()
    refs: dict[EdgeKey, dict] = {}
    for n in doc["nodes"]:
        graph.nodes.add(Entity(n["host_id"], n["app_name"]))
    for e in doc["edges"]:
        src = Entity(e["src"]["host_id"], e["src"]["app_name"])
        dst = Entity(e["dst"]["host_id"], e["dst"]["app_name"])
        stack = ProtocolStack.from_name(e["stack"])
        edge = CrEdge(src=src, dst=dst, stack=stack)
        graph.edges[edge.key] = edge
        graph.nodes.add(src)
        graph.nodes.add(dst)
        refs[edge.key] = e.get("files", {})
    return graph, refs


def dump_graph_json(graph: CrGraph,
                    dataset_refs: Optional[dict[EdgeKey, dict]] = None) -> str:
    return json.dumps(graph_to_dict(graph, dataset_refs), indent=2, sort_keys=True)
