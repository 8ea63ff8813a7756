"""Event loop, metrics, and scenario entry point."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from ..graph import AppMapping
from ..records import PacketRecord
from .controllers import Controller, FwdController, TrainController, ZtAssets, ZtController
from .flow_table import DEFAULT_COOKIE, FlowTable
from .topology import Topology
from .workload import ScheduledPacket, build_schedule, parse_workload

MAX_HOPS = 64


@dataclass
class SimMetrics:
    mode: str
    injected: int = 0
    delivered: int = 0
    denied: int = 0
    dropped: int = 0
    packet_in_count: int = 0
    rules_per_switch: dict = field(default_factory=dict)  # peak concurrent
    per_host_bytes: dict = field(default_factory=dict)
    per_host_throughput_bps: dict = field(default_factory=dict)
    controller_processing_time: float = 0.0  # wall time, reported separately

    def to_dict(self) -> dict:
        """Deterministic portion of the metrics (timing excluded)."""
        return {
            "mode": self.mode,
            "injected": self.injected,
            "delivered": self.delivered,
            "denied": self.denied,
            "dropped": self.dropped,
            "packet_in_count": self.packet_in_count,
            "rules_per_switch": dict(sorted(self.rules_per_switch.items())),
            "per_host_bytes": dict(sorted(self.per_host_bytes.items())),
            "per_host_throughput_bps": dict(sorted(
                self.per_host_throughput_bps.items())),
        }


class Engine:
    """Single-threaded deterministic event loop over a packet schedule.

    A packet's full journey (hops, controller consults, rule installs)
    completes within its event; statistics queries fire every
    sampling_rate seconds between packet events.
    """

    def __init__(self, topology: Topology, controller: Controller,
                 schedule: list[ScheduledPacket], sampling_rate: float = 5.0,
                 log_matches: bool = True):
        self.topology = topology
        self.controller = controller
        self.schedule = schedule
        self.sampling_rate = sampling_rate
        self.log_matches = log_matches
        self.tables: dict[str, FlowTable] = {
            sw: FlowTable() for sw in topology.switches}
        self.event_rows: list[tuple] = []
        self.mirror_records: list[PacketRecord] = []
        self.metrics = SimMetrics(mode=controller.name)
        self._cookie_seq = DEFAULT_COOKIE
        controller.bind(self)

    # --- services used by controllers -------------------------------------

    def table(self, sw_id: str) -> FlowTable:
        return self.tables[sw_id]

    def install(self, sw_id: str, match: dict, priority: int, actions: list,
                idle_timeout: float, hard_timeout: float, now: float,
                rule_id: str = "") -> int:
        self._cookie_seq += 1
        cookie, was_new = self.tables[sw_id].install(
            self._cookie_seq, match, priority, actions, idle_timeout,
            hard_timeout, now, rule_id)
        if was_new:
            self.log(now, "flow_mod_add", sw_id, f"{cookie}:{rule_id}")
            live = len(self.tables[sw_id].rules) - 1  # minus default
            peak = self.metrics.rules_per_switch.get(sw_id, 0)
            self.metrics.rules_per_switch[sw_id] = max(peak, live)
        else:
            self._cookie_seq -= 1
            self.log(now, "flow_mod_refresh", sw_id, f"{cookie}:{rule_id}")
        return cookie

    def remove(self, sw_id: str, cookie: int, now: float, reason: str = "") -> None:
        rule = self.tables[sw_id].remove(cookie)
        if rule is not None:
            self.log(now, "flow_mod_remove", sw_id, f"{cookie}:{reason}")

    def log(self, ts: float, kind: str, sw_id: str, detail: str) -> None:
        self.event_rows.append((ts, kind, sw_id, detail))

    # --- event processing ---------------------------------------------------

    def _peer(self, sw_id: str, port: int):
        host = self.topology.host_ports[sw_id].get(port)
        if host is not None:
            return ("host", host)
        link = self.topology.adjacency[sw_id].get(port)
        if link is not None:
            return ("switch", link)
        return None

    def _expire(self, now: float) -> None:
        for sw_id in self.topology.switches:
            for rule in self.tables[sw_id].expire(now):
                self.log(now, "flow_expire", sw_id, f"{rule.cookie}:{rule.rule_id}")

    def _handle_packet(self, sp: ScheduledPacket) -> None:
        pkt = sp.rec
        now = pkt.ts
        self.metrics.injected += 1
        att = self.topology.hosts[sp.src_host]
        sw_id, in_port = att.switch, att.port
        for _ in range(MAX_HOPS):
            table = self.tables[sw_id]
            for rule in table.expire(now):
                self.log(now, "flow_expire", sw_id, f"{rule.cookie}:{rule.rule_id}")
            rule = table.match(pkt)
            rule.packets += 1
            rule.bytes += pkt.ip_len
            rule.last_matched = now
            if rule.cookie == DEFAULT_COOKIE:
                self.metrics.packet_in_count += 1
                self.log(now, "packet_in", sw_id, f"cookie={DEFAULT_COOKIE}")
                t0 = time.perf_counter()
                result = self.controller.packet_in(now, sw_id, pkt, in_port)
                self.metrics.controller_processing_time += time.perf_counter() - t0
                if result.kind == "deny":
                    self.metrics.denied += 1
                    self.log(now, "deny", sw_id, result.reason)
                    return
                if result.kind == "drop":
                    self.metrics.dropped += 1
                    self.log(now, "drop", sw_id, result.reason)
                    return
                out_port = result.egress
                self.log(now, "packet_out", sw_id, f"port={out_port}")
            else:
                if self.log_matches:
                    self.log(now, "match", sw_id, f"{rule.cookie}:{pkt.ip_len}")
                out_port = None
                for action in rule.actions:
                    if action[0] == "forward":
                        out_port = action[1]
                    elif action[0] == "mirror":
                        self.mirror_records.append(pkt)
                        self.log(now, "mirror", sw_id, f"{rule.cookie}")
                        self.controller.on_mirror(pkt)
                if out_port is None:
                    self.metrics.dropped += 1
                    self.log(now, "drop", sw_id, "no-forward-action")
                    return
            peer = self._peer(sw_id, out_port)
            if peer is None:
                self.metrics.dropped += 1
                self.log(now, "drop", sw_id, f"dead-port-{out_port}")
                return
            if peer[0] == "host":
                host = peer[1]
                if host == sp.dst_host:
                    self.metrics.delivered += 1
                    self.metrics.per_host_bytes[host] = (
                        self.metrics.per_host_bytes.get(host, 0) + pkt.ip_len)
                    self.log(now, "deliver", sw_id, host)
                else:
                    self.metrics.dropped += 1
                    self.log(now, "drop", sw_id, f"misdelivered-{host}")
                return
            sw_id, in_port = peer[1]
        self.metrics.dropped += 1
        self.log(now, "drop", sw_id, "hop-limit")

    def run(self) -> SimMetrics:
        if not self.schedule:
            return self.metrics
        first_ts = self.schedule[0].rec.ts
        last_ts = self.schedule[-1].rec.ts
        end_time = last_ts + 2 * self.sampling_rate
        ticks = []
        t = first_ts + self.sampling_rate
        while t <= end_time + 1e-9:
            ticks.append(t)
            t += self.sampling_rate

        events: list[tuple] = []
        for i, sp in enumerate(self.schedule):
            events.append((sp.rec.ts, 0, i, "packet", sp))
        for i, ts in enumerate(ticks):
            events.append((ts, 1, i, "stats", None))
        events.sort(key=lambda e: (e[0], e[1], e[2]))

        for ts, _, _, kind, payload in events:
            if kind == "packet":
                self._handle_packet(payload)
            else:
                self._expire(ts)
                self.log(ts, "stats", "-", "tick")
                t0 = time.perf_counter()
                self.controller.on_stats_tick(ts)
                self.metrics.controller_processing_time += time.perf_counter() - t0
        self._expire(end_time + self.sampling_rate)

        span = max(last_ts - first_ts, 1e-9)
        for host, nbytes in self.metrics.per_host_bytes.items():
            self.metrics.per_host_throughput_bps[host] = nbytes * 8.0 / span
        return self.metrics


@dataclass
class ScenarioResult:
    metrics: SimMetrics
    event_rows: list[tuple]
    controller: Controller
    mapping: AppMapping
    schedule: list[ScheduledPacket]
    mirror_records: list[PacketRecord]

    def event_log_csv(self) -> str:
        import csv
        import io
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["ts", "kind", "switch", "detail"])
        for row in self.event_rows:
            writer.writerow(row)
        return buf.getvalue()


def run_scenario(spec: dict, mode: Optional[str] = None,
                 seed: Optional[int] = None,
                 zt_assets: Optional[ZtAssets] = None,
                 log_matches: bool = True) -> ScenarioResult:
    """Run one scenario spec in one mode; deterministic given (spec, seed)."""
    topology = Topology.from_dict(spec)
    entries = parse_workload(spec["workload"])
    run_mode = mode or spec.get("mode", "train")
    run_seed = seed if seed is not None else int(spec.get("seed", 0))
    idle = float(spec.get("idle_timeout", 10.0))
    sampling = float(spec.get("sampling_rate", 5.0))
    schedule, mapping = build_schedule(entries, topology, run_seed)

    if run_mode == "train":
        controller: Controller = TrainController(mapping, idle_timeout=idle)
    elif run_mode == "zt":
        if zt_assets is None:
            raise ValueError("zt mode requires trained assets")
        controller = ZtController(mapping, zt_assets, idle_timeout=idle)
    elif run_mode == "fwd":
        controller = FwdController(idle_timeout=idle)
    else:
        raise ValueError(f"unknown mode {run_mode!r}")

    engine = Engine(topology, controller, schedule, sampling_rate=sampling,
                    log_matches=log_matches)
    metrics = engine.run()
    return ScenarioResult(metrics=metrics, event_rows=engine.event_rows,
                          controller=controller, mapping=mapping,
                          schedule=schedule,
                          mirror_records=engine.mirror_records)
