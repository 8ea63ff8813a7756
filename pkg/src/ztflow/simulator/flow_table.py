"""Per-switch flow table: priority-ordered rules, counters, timers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..records import PacketRecord, Protocol

DEFAULT_COOKIE = 0
DEFAULT_PRIORITY = 0


@dataclass
class InstalledRule:
    cookie: int
    priority: int
    match: dict[str, object]
    actions: list[tuple]
    idle_timeout: float  # 0 = none
    hard_timeout: float  # 0 = none
    installed_at: float
    last_matched: float
    packets: int = 0
    bytes: int = 0
    rule_id: str = ""  # provenance (mined id, fallback, fwd, train)

    def match_fingerprint(self) -> tuple:
        return tuple(sorted((k, str(v)) for k, v in self.match.items()))


def _packet_field(pkt: PacketRecord, key: str):
    value = getattr(pkt, key, None)
    if isinstance(value, Protocol):
        return value.value
    return value


def rule_matches_packet(rule: InstalledRule, pkt: PacketRecord) -> bool:
    for key, value in rule.match.items():
        got = _packet_field(pkt, key)
        if got is None or got != value:
            return False
    return True


class FlowTable:
    """Rules matched in descending priority; ties break on install order.

    The default rule (cookie 0, lowest priority) always exists, matches
    everything, and punts to the controller.
    """

    def __init__(self, now: float = 0.0):
        self.rules: dict[int, InstalledRule] = {}
        self._default = InstalledRule(
            cookie=DEFAULT_COOKIE, priority=DEFAULT_PRIORITY, match={},
            actions=[("controller",)], idle_timeout=0.0, hard_timeout=0.0,
            installed_at=now, last_matched=now, rule_id="default")
        self.rules[DEFAULT_COOKIE] = self._default
        self._seq = 0

    @property
    def default_rule(self) -> InstalledRule:
        return self._default

    def live_rules(self) -> list[InstalledRule]:
        """Non-default rules in match order."""
        rules = [r for r in self.rules.values() if r.cookie != DEFAULT_COOKIE]
        rules.sort(key=lambda r: (-r.priority, r.installed_at, r.cookie))
        return rules

    def install(self, cookie: int, match: dict[str, object], priority: int,
                actions: list[tuple], idle_timeout: float, hard_timeout: float,
                now: float, rule_id: str = "") -> tuple[int, bool]:
        """Add a rule; an identical (match, priority) entry is refreshed in
        place, keeping its counters. Returns (cookie, was_new)."""
        if priority <= DEFAULT_PRIORITY:
            raise ValueError("installed rules must outrank the default rule")
        fingerprint = tuple(sorted((k, str(v)) for k, v in match.items()))
        for rule in self.rules.values():
            if rule.cookie == DEFAULT_COOKIE:
                continue
            if rule.priority == priority and rule.match_fingerprint() == fingerprint:
                rule.last_matched = now
                rule.actions = list(actions)
                rule.idle_timeout = idle_timeout
                rule.hard_timeout = hard_timeout
                return rule.cookie, False
        self.rules[cookie] = InstalledRule(
            cookie=cookie, priority=priority, match=dict(match),
            actions=list(actions), idle_timeout=idle_timeout,
            hard_timeout=hard_timeout, installed_at=now, last_matched=now,
            rule_id=rule_id)
        return cookie, True

    def remove(self, cookie: int) -> Optional[InstalledRule]:
        if cookie == DEFAULT_COOKIE:
            return None
        return self.rules.pop(cookie, None)

    def expire(self, now: float) -> list[InstalledRule]:
        """Drop rules whose idle or hard deadline has been crossed."""
        dead = []
        for rule in list(self.rules.values()):
            if rule.cookie == DEFAULT_COOKIE:
                continue
            idle_out = (rule.idle_timeout > 0
                        and now - rule.last_matched >= rule.idle_timeout)
            hard_out = (rule.hard_timeout > 0
                        and now - rule.installed_at >= rule.hard_timeout)
            if idle_out or hard_out:
                dead.append(self.rules.pop(rule.cookie))
        return dead

    def match(self, pkt: PacketRecord) -> InstalledRule:
        for rule in self.live_rules():
            if rule_matches_packet(rule, pkt):
                return rule
        return self._default
