"""Switch/host topology with deterministic shortest-path selection."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class HostAttachment:
    host_id: str
    switch: str
    port: int
    addr: str
    mac: str = ""


@dataclass(frozen=True)
class Hop:
    switch: str
    in_port: Optional[int]
    out_port: int


class Topology:
    def __init__(self, switches: list[str],
                 links: list[tuple[str, int, str, int]],
                 hosts: list[HostAttachment]):
        self.switches = sorted(switches)
        self.adjacency: dict[str, dict[int, tuple[str, int]]] = {
            s: {} for s in self.switches}
        for sw_a, port_a, sw_b, port_b in links:
            self._add_port(sw_a, port_a, (sw_b, port_b))
            self._add_port(sw_b, port_b, (sw_a, port_a))
        self.hosts: dict[str, HostAttachment] = {}
        self.host_ports: dict[str, dict[int, str]] = {s: {} for s in self.switches}
        self.addr_to_host: dict[str, str] = {}
        for att in hosts:
            if att.host_id in self.hosts:
                raise ValueError(f"host {att.host_id} attached twice")
            if att.switch not in self.adjacency:
                raise ValueError(f"host {att.host_id} on unknown switch {att.switch}")
            if att.port in self.adjacency[att.switch] \
                    or att.port in self.host_ports[att.switch]:
                raise ValueError(
                    f"port {att.switch}:{att.port} already wired")
            self.hosts[att.host_id] = att
            self.host_ports[att.switch][att.port] = att.host_id
            self.addr_to_host[att.addr] = att.host_id
        self._check_connected()

    def _add_port(self, sw: str, port: int, peer: tuple[str, int]) -> None:
        if sw not in self.adjacency:
            raise ValueError(f"link references unknown switch {sw}")
        if port in self.adjacency[sw]:
            raise ValueError(f"port {sw}:{port} wired twice")
        self.adjacency[sw][port] = peer

    def _check_connected(self) -> None:
        if not self.switches:
            raise ValueError("topology needs at least one switch")
        seen = {self.switches[0]}
        frontier = deque(seen)
        while frontier:
            sw = frontier.popleft()
            for peer_sw, _ in self.adjacency[sw].values():
                if peer_sw not in seen:
                    seen.add(peer_sw)
                    frontier.append(peer_sw)
        missing = set(self.switches) - seen
        if missing:
            raise ValueError(f"disconnected switches: {sorted(missing)}")

    def neighbors(self, sw: str) -> dict[str, int]:
        """Peer switch -> lowest local port reaching it."""
        out: dict[str, int] = {}
        for port in sorted(self.adjacency[sw]):
            peer_sw, _ = self.adjacency[sw][port]
            out.setdefault(peer_sw, port)
        return out

    def edge_switch(self, host_id: str) -> str:
        return self.hosts[host_id].switch

    def _switch_path(self, src_sw: str, dst_sw: str) -> list[str]:
        """Hop-count shortest switch sequence, lowest-id tie-break."""
        dist = {dst_sw: 0}
        frontier = deque([dst_sw])
        while frontier:
            sw = frontier.popleft()
            for peer_sw in self.neighbors(sw):
                if peer_sw not in dist:
                    dist[peer_sw] = dist[sw] + 1
                    frontier.append(peer_sw)
        if src_sw not in dist:
            raise ValueError(f"no path between {src_sw} and {dst_sw}")
        path = [src_sw]
        cur = src_sw
        while cur != dst_sw:
            nxt = min(p for p in self.neighbors(cur) if dist.get(p) == dist[cur] - 1)
            path.append(nxt)
            cur = nxt
        return path

    def _link_port(self, sw_a: str, sw_b: str) -> tuple[int, int]:
        port_a = self.neighbors(sw_a)[sw_b]
        return port_a, self.adjacency[sw_a][port_a][1]

    def path(self, src_host: str, dst_host: str) -> list[Hop]:
        """Hops from the source host's edge switch to the destination's."""
        src = self.hosts[src_host]
        return self._hops(self._switch_path(src.switch, self.hosts[dst_host].switch),
                          src.port, dst_host)

    def path_from_switch(self, sw: str, dst_host: str) -> list[Hop]:
        """Hops from an arbitrary switch; the first in_port is unknown."""
        return self._hops(self._switch_path(sw, self.hosts[dst_host].switch),
                          None, dst_host)

    def _hops(self, sw_seq: list[str], first_in: Optional[int],
              dst_host: str) -> list[Hop]:
        dst = self.hosts[dst_host]
        hops = []
        in_port = first_in
        for i, sw in enumerate(sw_seq):
            if i + 1 < len(sw_seq):
                out_port, peer_in = self._link_port(sw, sw_seq[i + 1])
            else:
                out_port, peer_in = dst.port, None
            hops.append(Hop(switch=sw, in_port=in_port, out_port=out_port))
            in_port = peer_in
        return hops

    @classmethod
    def from_dict(cls, doc: dict) -> "Topology":
        hosts = []
        for i, h in enumerate(doc["hosts"]):
            hosts.append(HostAttachment(
                host_id=h["id"], switch=h["switch"], port=int(h["port"]),
                addr=h["addr"], mac=h.get("mac", f"02:00:00:00:00:{i + 1:02x}")))
        links = [tuple(l) for l in doc["links"]]
        return cls(list(doc["switches"]), links, hosts)
