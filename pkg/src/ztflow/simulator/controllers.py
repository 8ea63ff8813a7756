"""Controller logic: zero-trust training/enforcement and the reactive baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..arl import ArlDetector, ArlState
from ..graph import AppMapping, CrGraph, aggregate_stats
from ..mining import FlowRule, RuleAssociation, match_rule
from ..records import (
    FlowStatSample,
    PacketRecord,
    Protocol,
    UnsupportedStackError,
    infer_stack,
    preprocess,
)
from ..rtfsl import RtfslModel, RtfslMonitor

MIRROR_PORT = -1
RULE_PRIORITY = 100


@dataclass(frozen=True)
class PacketInResult:
    kind: str  # "out" | "deny" | "drop"
    egress: Optional[int] = None
    reason: str = ""


def five_tuple_match(pkt: PacketRecord) -> dict[str, object]:
    match: dict[str, object] = {
        "src_ip": pkt.src_ip,
        "dst_ip": pkt.dst_ip,
        "proto": pkt.proto.value,
    }
    if pkt.src_port is not None:
        match["src_port"] = pkt.src_port
    if pkt.dst_port is not None:
        match["dst_port"] = pkt.dst_port
    return match


class Controller:
    name = "base"

    def bind(self, engine) -> None:
        self.engine = engine

    def packet_in(self, now: float, sw_id: str, pkt: PacketRecord,
                  in_port: Optional[int]) -> PacketInResult:
        raise NotImplementedError

    def on_mirror(self, pkt: PacketRecord) -> None:
        pass

    def on_stats_tick(self, now: float) -> None:
        pass

    def _egress_at(self, sw_id: str, hops) -> Optional[int]:
        for hop in hops:
            if hop.switch == sw_id:
                return hop.out_port
        return None


class TrainController(Controller):
    """Builds the CR graph and per-edge datasets while forwarding everything.

    The first packet of a flow installs a 5-tuple rule along the path with
    an extra mirror action at the source's edge switch, so subsequent
    packets reach the datasets without touching the controller.
    """

    name = "train"

    def __init__(self, mapping: AppMapping, idle_timeout: float = 10.0,
                 hard_timeout: float = 0.0):
        self.mapping = mapping
        self.idle_timeout = idle_timeout
        self.hard_timeout = hard_timeout
        self.graph = CrGraph()
        self.stats_switch: dict[tuple, str] = {}
        self.edge_cookies: dict[tuple, set[tuple[str, int]]] = {}

    def packet_in(self, now, sw_id, pkt, in_port) -> PacketInResult:
        try:
            infer_stack(pkt)
        except UnsupportedStackError:
            return PacketInResult("drop", reason="unsupported-stack")
        key = self.graph.observe(pkt, self.mapping)
        topo = self.engine.topology
        src_host = topo.addr_to_host.get(pkt.src_ip)
        dst_host = topo.addr_to_host.get(pkt.dst_ip)
        if src_host is None or dst_host is None:
            return PacketInResult("drop", reason="unknown-host")
        hops = topo.path(src_host, dst_host)
        match = five_tuple_match(pkt)
        edge_sw = hops[0].switch
        for hop in hops:
            actions = [("forward", hop.out_port)]
            if hop.switch == edge_sw:
                actions.append(("mirror", MIRROR_PORT))
            cookie = self.engine.install(hop.switch, match, RULE_PRIORITY,
                                         actions, self.idle_timeout,
                                         self.hard_timeout, now,
                                         rule_id="train")
            if hop.switch == edge_sw:
                self.stats_switch[key] = edge_sw
                self.edge_cookies.setdefault(key, set()).add((edge_sw, cookie))
        egress = self._egress_at(sw_id, hops)
        if egress is None:
            egress = topo.path_from_switch(sw_id, dst_host)[0].out_port
        return PacketInResult("out", egress=egress)

    def on_mirror(self, pkt: PacketRecord) -> None:
        self.graph.observe(pkt, self.mapping)

    def on_stats_tick(self, now: float) -> None:
        for key in sorted(self.edge_cookies, key=str):
            sw = self.stats_switch[key]
            table = self.engine.table(sw)
            pairs = [(r.packets, r.bytes)
                     for c_sw, cookie in sorted(self.edge_cookies[key])
                     if c_sw == sw and (r := table.rules.get(cookie)) is not None]
            packets, byts = aggregate_stats(pairs)
            self.graph.edges[key].flow_stats.append(
                FlowStatSample(t=now, packets_cum=packets, bytes_cum=byts))


@dataclass
class ZtAssets:
    """Trained artifacts the enforcement controller runs on."""

    graph: CrGraph
    detectors: dict[tuple, ArlDetector]
    models: dict[tuple, RtfslModel]
    rules_by_edge: dict[tuple, list[FlowRule]]
    associations: list[RuleAssociation] = field(default_factory=list)

    def rule_index(self) -> dict[str, FlowRule]:
        return {r.rule_id: r
                for rules in self.rules_by_edge.values() for r in rules}

    def rule_to_edge(self) -> dict[str, tuple]:
        return {r.rule_id: key
                for key, rules in self.rules_by_edge.items() for r in rules}


def assign_rules_to_edges(graph: CrGraph,
                          rules: list[FlowRule]) -> dict[tuple, list[FlowRule]]:
    """Attach loaded rules to the graph edges they were mined from, by the
    edge's modal addresses and the stack implied by the rule's proto."""
    by_edge: dict[tuple, list[FlowRule]] = {}
    for key in sorted(graph.edges, key=str):
        edge = graph.edges[key]
        if not edge.packet_dataset:
            continue
        src_ip, dst_ip = edge.modal_addresses()
        stack_proto = edge.stack.layers[-1]
        for rule in rules:
            if rule.pairs.get("src_ip") != src_ip:
                continue
            if rule.pairs.get("dst_ip") != dst_ip:
                continue
            proto = rule.pairs.get("proto")
            if proto is not None and proto != stack_proto:
                continue
            by_edge.setdefault(key, []).append(rule)
    return by_edge


class ZtController(Controller):
    """Zero-trust enforcement: CR-graph lookup, per-packet access decision,
    proactive deployment of mined rules with their association groups, and
    flow-statistics monitoring with rule revocation."""

    name = "zt"

    def __init__(self, mapping: AppMapping, assets: ZtAssets,
                 idle_timeout: float = 10.0, hard_timeout: float = 0.0):
        self.mapping = mapping
        self.assets = assets
        self.idle_timeout = idle_timeout
        self.hard_timeout = hard_timeout
        self._rule_index = assets.rule_index()
        self._rule_to_edge = assets.rule_to_edge()
        self._fallbacks: dict[tuple, FlowRule] = {}
        self._fallback_count = 0
        self.monitors: dict[tuple, RtfslMonitor] = {}
        self.stats_switch: dict[tuple, str] = {}
        self.edge_cookies: dict[tuple, set[tuple[str, int]]] = {}
        self.stats_log: dict[tuple, list[FlowStatSample]] = {}
        self.revoked: list[tuple] = []

    def packet_in(self, now, sw_id, pkt, in_port) -> PacketInResult:
        try:
            stack = infer_stack(pkt)
        except UnsupportedStackError:
            return PacketInResult("drop", reason="unsupported-stack")
        src_e = self.mapping.resolve(pkt.src_ip, pkt.src_port, pkt.proto, pkt.ts)
        dst_e = self.mapping.resolve(pkt.dst_ip, pkt.dst_port, pkt.proto, pkt.ts)
        edge = self.assets.graph.lookup(src_e, dst_e, stack)
        if edge is None:
            return PacketInResult("deny", reason="unmodeled-communication")
        key = edge.key
        det = self.assets.detectors.get(key)
        if det is None or det.state is not ArlState.EXECUTE:
            return PacketInResult("deny", reason="no-enforceable-model")
        decision = det.decide(preprocess(pkt))
        if not decision.allowed:
            return PacketInResult("deny", reason=f"arl-rmse-{decision.rmse:.3g}")

        deploy: dict[str, FlowRule] = {}
        edge_rules = self.assets.rules_by_edge.get(key, [])
        for rule in edge_rules:
            deploy[rule.rule_id] = rule
        if not any(match_rule(r, pkt) for r in edge_rules):
            fb = self._fallback_for(key, pkt)
            deploy[fb.rule_id] = fb
        # proactively co-deploy every strongly associated rule
        for group in self.assets.associations:
            if group.rules & deploy.keys():
                for rid in group.rules:
                    rule = self._rule_index.get(rid)
                    if rule is not None:
                        deploy.setdefault(rid, rule)
        for rid in sorted(deploy):
            self._deploy_rule(now, deploy[rid], default_edge=key)

        topo = self.engine.topology
        src_host = topo.addr_to_host.get(pkt.src_ip)
        dst_host = topo.addr_to_host.get(pkt.dst_ip)
        if src_host is None or dst_host is None:
            return PacketInResult("drop", reason="unknown-host")
        hops = topo.path(src_host, dst_host)
        egress = self._egress_at(sw_id, hops)
        if egress is None:
            egress = topo.path_from_switch(sw_id, dst_host)[0].out_port
        return PacketInResult("out", egress=egress)

    def _fallback_for(self, key: tuple, pkt: PacketRecord) -> FlowRule:
        match = five_tuple_match(pkt)
        cache_key = (key, tuple(sorted((k, str(v)) for k, v in match.items())))
        rule = self._fallbacks.get(cache_key)
        if rule is None:
            self._fallback_count += 1
            rule = FlowRule(pairs=match, priority=RULE_PRIORITY,
                            idle_timeout=self.idle_timeout,
                            hard_timeout=self.hard_timeout,
                            rule_id=f"fb{self._fallback_count}")
            self._fallbacks[cache_key] = rule
            self._rule_to_edge[rule.rule_id] = key
        return rule

    def _deploy_rule(self, now: float, rule: FlowRule, default_edge: tuple) -> None:
        topo = self.engine.topology
        src_host = topo.addr_to_host.get(rule.pairs.get("src_ip"))
        dst_host = topo.addr_to_host.get(rule.pairs.get("dst_ip"))
        if src_host is None or dst_host is None:
            return
        owner = self._rule_to_edge.get(rule.rule_id, default_edge)
        hops = topo.path(src_host, dst_host)
        edge_sw = hops[0].switch
        for hop in hops:
            cookie = self.engine.install(
                hop.switch, rule.pairs, rule.priority,
                [("forward", hop.out_port)],
                rule.idle_timeout or self.idle_timeout, rule.hard_timeout,
                now, rule_id=rule.rule_id)
            self.edge_cookies.setdefault(owner, set()).add((hop.switch, cookie))
        self.stats_switch[owner] = edge_sw

    def on_stats_tick(self, now: float) -> None:
        for key in sorted(self.edge_cookies, key=str):
            sw = self.stats_switch.get(key)
            if sw is None:
                continue
            table = self.engine.table(sw)
            pairs = [(r.packets, r.bytes)
                     for c_sw, cookie in sorted(self.edge_cookies[key])
                     if c_sw == sw and (r := table.rules.get(cookie)) is not None]
            packets, byts = aggregate_stats(pairs)
            sample = FlowStatSample(t=now, packets_cum=packets, bytes_cum=byts)
            self.stats_log.setdefault(key, []).append(sample)
            model = self.assets.models.get(key)
            if model is None:
                continue
            monitor = self.monitors.get(key)
            if monitor is None:
                monitor = self.monitors[key] = RtfslMonitor(model)
            verdict = monitor.step(sample)
            if verdict.anomalous:
                self._revoke_edge(now, key, verdict)

    def _revoke_edge(self, now: float, key: tuple, verdict) -> None:
        for sw, cookie in sorted(self.edge_cookies.get(key, set())):
            self.engine.remove(sw, cookie, now,
                               reason=f"rtfsl-{verdict.channel.value}")
        self.edge_cookies[key] = set()
        self.revoked.append(key)


class FwdController(Controller):
    """Reactive forwarding baseline: per-switch 5-tuple rules, no access
    control; every switch on the path pays its own controller round trip."""

    name = "fwd"

    def __init__(self, idle_timeout: float = 10.0, hard_timeout: float = 0.0):
        self.idle_timeout = idle_timeout
        self.hard_timeout = hard_timeout

    def packet_in(self, now, sw_id, pkt, in_port) -> PacketInResult:
        topo = self.engine.topology
        dst_host = topo.addr_to_host.get(pkt.dst_ip)
        if dst_host is None:
            return PacketInResult("drop", reason="unknown-host")
        hops = topo.path_from_switch(sw_id, dst_host)
        out_port = hops[0].out_port
        self.engine.install(sw_id, five_tuple_match(pkt), RULE_PRIORITY,
                            [("forward", out_port)], self.idle_timeout,
                            self.hard_timeout, now, rule_id="fwd")
        return PacketInResult("out", egress=out_port)
