"""Least-privilege flow-rule mining and rule-association mining.

Per CR edge, packet headers become a binary table of unique header:value
columns restricted to fields a switch can actually match on; frequent
itemsets and high-confidence associations over that table yield the rule
predicates. A second pass over time windows of the app's traffic finds
groups of rules that are used together.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np

from .graph import CrEdge, CrGraph, Entity
from .records import PacketRecord, Protocol

# Header fields a flow rule may match on (OpenFlow-enforceable subset of the
# parsed header; TTL, lengths, flags and checksums are not matchable).
ENFORCEABLE_FIELDS = (
    "eth_type", "vlan_id", "src_ip", "dst_ip", "proto",
    "dscp", "ecn", "src_port", "dst_port",
    "icmp_type", "icmp_code", "arp_op",
)

DEFAULT_MIN_SUPPORT = 0.9
DEFAULT_MIN_CONFIDENCE = 1.0
RULE_PRIORITY = 100
DEFAULT_IDLE_TIMEOUT = 10.0


class BinaryTable:
    """Boolean occurrence matrix with unique, ordered column labels."""

    def __init__(self, columns: Sequence[str], rows: np.ndarray):
        self.columns = tuple(columns)
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column labels")
        self.rows = np.asarray(rows, dtype=bool)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.columns):
            raise ValueError("row width does not match column count")

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def from_itemsets(cls, transactions: Sequence[Iterable[str]]) -> "BinaryTable":
        columns = sorted({item for t in transactions for item in t})
        idx = {c: i for i, c in enumerate(columns)}
        rows = np.zeros((len(transactions), len(columns)), dtype=bool)
        for r, t in enumerate(transactions):
            for item in t:
                rows[r, idx[item]] = True
        return cls(columns, rows)


@dataclass(frozen=True)
class Itemset:
    items: frozenset[str]
    support: float


@dataclass(frozen=True)
class AssociationRule:
    antecedents: frozenset[str]
    consequents: frozenset[str]
    support: float
    confidence: float


@dataclass
class FlowRule:
    """Match predicates plus installation metadata.

    A packet matches iff every key=value pair of the rule equals the
    packet's header value; a key absent from the packet never matches.
    """

    pairs: dict[str, object]
    priority: int = RULE_PRIORITY
    cookie: int = 0
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT
    hard_timeout: float = 0.0
    actions: list = field(default_factory=list)
    rule_id: str = ""

    def match_key(self) -> tuple:
        return tuple(sorted((k, str(v)) for k, v in self.pairs.items()))


@dataclass(frozen=True)
class RuleAssociation:
    rules: frozenset[str]
    support: float
    confidence: float


def apriori(table: BinaryTable, min_support: float) -> list[Itemset]:
    """All itemsets with support >= min_support, mined levelwise.

    Candidate (k+1)-itemsets are joined from frequent k-itemsets and pruned
    by downward closure before counting.
    """
    if not (0 < min_support <= 1):
        raise ValueError("min_support must be in (0, 1]")
    if table.n_rows == 0:
        raise ValueError("empty table")
    n = float(table.n_rows)
    masks = {i: table.rows[:, i] for i in range(len(table.columns))}

    result: list[Itemset] = []
    current: dict[frozenset[int], np.ndarray] = {}
    for i, col in enumerate(table.columns):
        sup = masks[i].sum() / n
        if sup >= min_support:
            key = frozenset([i])
            current[key] = masks[i]
            result.append(Itemset(frozenset([col]), sup))

    k = 1
    while current:
        prev_keys = set(current)
        candidates: set[frozenset[int]] = set()
        for a, b in combinations(sorted(prev_keys, key=sorted), 2):
            joined = a | b
            if len(joined) != k + 1:
                continue
            if all(frozenset(sub) in prev_keys for sub in combinations(joined, k)):
                candidates.add(joined)
        nxt: dict[frozenset[int], np.ndarray] = {}
        for cand in sorted(candidates, key=sorted):
            ordered = sorted(cand)
            mask = masks[ordered[0]].copy()
            for i in ordered[1:]:
                mask &= masks[i]
            sup = mask.sum() / n
            if sup >= min_support:
                nxt[cand] = mask
                result.append(Itemset(
                    frozenset(table.columns[i] for i in cand), sup))
        current = nxt
        k += 1
    return result


def association_rules(itemsets: Sequence[Itemset],
                      min_confidence: float) -> list[AssociationRule]:
    """All A => B splits of frequent itemsets with confidence >= threshold."""
    support = {s.items: s.support for s in itemsets}
    rules: list[AssociationRule] = []
    for s in itemsets:
        if len(s.items) < 2:
            continue
        items = sorted(s.items)
        for r in range(1, len(items)):
            for ante in combinations(items, r):
                a = frozenset(ante)
                sup_a = support.get(a)
                if sup_a is None or sup_a == 0:
                    continue
                conf = s.support / sup_a
                if conf >= min_confidence:
                    rules.append(AssociationRule(
                        antecedents=a,
                        consequents=s.items - a,
                        support=s.support,
                        confidence=conf,
                    ))
    return rules


def match_rule(rule: FlowRule, pkt: PacketRecord) -> bool:
    """True iff every rule predicate equals the packet's header value."""
    for key, value in rule.pairs.items():
        pkt_value = getattr(pkt, key, None)
        if isinstance(pkt_value, Protocol):
            pkt_value = pkt_value.value
        if pkt_value is None or pkt_value != value:
            return False
    return True


def _column_label(field_name: str, value) -> str:
    return f"{field_name}:{value}"


def _split_label(label: str) -> tuple[str, str]:
    field_name, _, raw = label.partition(":")
    return field_name, raw


_INT_FIELDS = frozenset({
    "eth_type", "vlan_id", "dscp", "ecn", "src_port", "dst_port",
    "icmp_type", "icmp_code", "arp_op",
})


def _label_to_pair(label: str) -> tuple[str, object]:
    field_name, raw = _split_label(label)
    if field_name in _INT_FIELDS:
        return field_name, int(raw)
    return field_name, raw


def edge_binary_table(edge: CrEdge) -> BinaryTable:
    """Binary table of the edge's dataset over enforceable header:value pairs."""
    transactions = []
    for rec in edge.packet_dataset:
        items = []
        for field_name in ENFORCEABLE_FIELDS:
            value = getattr(rec, field_name)
            if isinstance(value, Protocol):
                value = value.value
            if value is not None:
                items.append(_column_label(field_name, value))
        transactions.append(items)
    return BinaryTable.from_itemsets(transactions)


def mine_edge_rules(edge: CrEdge,
                    min_support: float = DEFAULT_MIN_SUPPORT,
                    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                    idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
                    hard_timeout: float = 0.0) -> list[FlowRule]:
    """Mine the flow rules of one stream (rule ids left for the caller).

    Frequent itemsets over the header:value table, association rules at
    min_confidence, antecedents and consequents unified, duplicate sets
    discarded, and only the maximum-cardinality sets kept. Each surviving
    set becomes a rule augmented with the edge's addresses.
    """
    if not edge.packet_dataset:
        return []
    table = edge_binary_table(edge)
    freq_items = apriori(table, min_support)
    rules = association_rules(freq_items, min_confidence)
    unified = {r.antecedents | r.consequents for r in rules}
    if not unified:
        return []
    max_card = max(len(u) for u in unified)
    survivors = sorted((u for u in unified if len(u) == max_card),
                       key=lambda u: sorted(u))
    src_ip, dst_ip = edge.modal_addresses()
    edge_rules = []
    for labels in survivors:
        pairs = dict(_label_to_pair(lbl) for lbl in sorted(labels))
        pairs["src_ip"] = src_ip
        pairs["dst_ip"] = dst_ip
        edge_rules.append(FlowRule(
            pairs=pairs,
            priority=RULE_PRIORITY,
            idle_timeout=idle_timeout,
            hard_timeout=hard_timeout,
        ))
    return edge_rules


def assign_rule_ids(rules_by_edge: dict[tuple, list[FlowRule]]) -> None:
    """Stable ids/cookies across the result, in deterministic edge order."""
    counter = 1
    for key in sorted(rules_by_edge, key=str):
        for rule in rules_by_edge[key]:
            rule.rule_id = f"r{counter}"
            rule.cookie = counter
            counter += 1


def generate_rules(graph: CrGraph, app: Entity,
                   min_support: float = DEFAULT_MIN_SUPPORT,
                   min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                   idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
                   hard_timeout: float = 0.0) -> dict[tuple, list[FlowRule]]:
    """Mine flow rules for every stream the app sources or sinks."""
    out: dict[tuple, list[FlowRule]] = {}
    for edge in sorted(graph.edges_of(app), key=lambda e: str(e.key)):
        out[edge.key] = mine_edge_rules(edge, min_support, min_confidence,
                                        idle_timeout, hard_timeout)
    assign_rule_ids(out)
    return out


def mine_rule_associations(rules: Sequence[FlowRule],
                           trace: Sequence[PacketRecord],
                           window_duration: float,
                           min_support: float = DEFAULT_MIN_SUPPORT,
                           min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                           ) -> list[RuleAssociation]:
    """Mine strong co-activation groups among generated rules.

    Each row of the binary table is one time window; a cell is set when the
    rule matched at least one packet in the window. Window starts jump to
    the first unconsumed packet's timestamp, so gaps in the trace never
    produce empty rows.
    """
    if not rules:
        raise ValueError("no rules to associate")
    if window_duration <= 0:
        raise ValueError("window_duration must be positive")
    rows: list[list[str]] = []
    idx = 0
    n = len(trace)
    while idx < n:
        ws = trace[idx].ts
        we = ws + window_duration
        window: list[PacketRecord] = []
        while idx < n and trace[idx].ts <= we:
            window.append(trace[idx])
            idx += 1
        row = [r.rule_id for r in rules if any(match_rule(r, p) for p in window)]
        rows.append(row)

    table = BinaryTable.from_itemsets(rows) if any(rows) else None
    if table is None or not table.columns:
        return []
    freq = apriori(table, min_support)
    assoc = association_rules(freq, min_confidence)
    groups: dict[frozenset[str], RuleAssociation] = {}
    for r in assoc:
        group = r.antecedents | r.consequents
        prev = groups.get(group)
        if prev is None or r.confidence > prev.confidence:
            groups[group] = RuleAssociation(group, r.support, r.confidence)
    return sorted(groups.values(), key=lambda g: sorted(g.rules))


def rules_to_dict(rules_by_edge: dict[tuple, list[FlowRule]],
                  associations: Sequence[RuleAssociation]) -> dict:
    all_rules = [r for key in sorted(rules_by_edge, key=str)
                 for r in rules_by_edge[key]]
    return {
        "rules": [
            {
                "id": r.rule_id,
                "match": {k: r.pairs[k] for k in sorted(r.pairs)},
                "priority": r.priority,
                "timeouts": {"idle": r.idle_timeout, "hard": r.hard_timeout},
            }
            for r in all_rules
        ],
        "associations": [
            {
                "rules": sorted(a.rules),
                "support": a.support,
                "confidence": a.confidence,
            }
            for a in associations
        ],
    }


def rules_from_dict(doc: dict) -> tuple[list[FlowRule], list[RuleAssociation]]:
    rules = []
    for i, r in enumerate(doc["rules"], start=1):
        rules.append(FlowRule(
            pairs=dict(r["match"]),
            priority=r["priority"],
            cookie=i,
            idle_timeout=r["timeouts"]["idle"],
            hard_timeout=r["timeouts"]["hard"],
            rule_id=r["id"],
        ))
    assocs = [RuleAssociation(frozenset(a["rules"]), a["support"], a["confidence"])
              for a in doc.get("associations", [])]
    return rules, assocs


def dump_rules_json(rules_by_edge: dict[tuple, list[FlowRule]],
                    associations: Sequence[RuleAssociation]) -> str:
    return json.dumps(rules_to_dict(rules_by_edge, associations),
                      indent=2, sort_keys=True)
