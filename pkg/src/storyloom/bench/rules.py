"""Constraint rules, scene graphs, and the rule checker.

Checking is purely symbolic: a scene graph states facts (entities with
attributes, object counts, relation triples, ordered event labels) and a
rule is satisfied exactly when the required facts hold on the pages it
governs. There is no inference — no inverse relations, no transitivity,
no geometry.

Per-kind semantics:

    identity_anchor   the character's attribute equals the value on every
                      page where the character appears (absent pages are
                      vacuously fine; a missing attribute is a violation)
    exact_count       counts[object] == n on every page in range (absent
                      object counts as zero)
    spatial_relation  the (subject, relation, object) triple is asserted
                      on every page in range where both entities appear
    temporal_order    every occurrence of event_a precedes every
                      occurrence of event_b in page-then-list order
    binding           on every page in range, an entity with
                      attribute_a=value_a is present if and only if an
                      entity with attribute_b=value_b is present
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Mapping, Sequence

from ..errors import EmptyRuleSet, MissingGraph, SpecError


class RuleKind(str, Enum):
    IDENTITY_ANCHOR = "identity_anchor"
    EXACT_COUNT = "exact_count"
    SPATIAL_RELATION = "spatial_relation"
    TEMPORAL_ORDER = "temporal_order"
    BINDING = "binding"


SPATIAL_RELATIONS = frozenset({
    "left_of", "right_of", "in_front_of", "behind", "east", "west", "north", "south",
})

_REQUIRED_PARAMS: dict[RuleKind, tuple[str, ...]] = {
    RuleKind.IDENTITY_ANCHOR: ("character_id", "attribute", "value"),
    RuleKind.EXACT_COUNT: ("object", "n"),
    RuleKind.SPATIAL_RELATION: ("subject", "relation", "object"),
    RuleKind.TEMPORAL_ORDER: ("event_a", "event_b"),
    RuleKind.BINDING: ("attribute_a", "value_a", "attribute_b", "value_b"),
}

_OPTIONAL_PARAMS: dict[RuleKind, tuple[str, ...]] = {
    RuleKind.IDENTITY_ANCHOR: (),
    RuleKind.EXACT_COUNT: ("page_range",),
    RuleKind.SPATIAL_RELATION: ("page_range",),
    RuleKind.TEMPORAL_ORDER: (),
    RuleKind.BINDING: ("page_range",),
}


@dataclass(frozen=True)
class ConstraintRule:
    id: str
    kind: RuleKind
    params: Mapping[str, Any]

    def __post_init__(self):
        required = _REQUIRED_PARAMS[self.kind]
        allowed = set(required) | set(_OPTIONAL_PARAMS[self.kind])
        for name in required:
            if name not in self.params:
                raise SpecError(self.id, f"{self.kind.value} missing param '{name}'")
        for name in self.params:
            if name not in allowed:
                raise SpecError(self.id, f"{self.kind.value} has unknown param '{name}'")
        if self.kind is RuleKind.SPATIAL_RELATION:
            relation = self.params["relation"]
            if relation not in SPATIAL_RELATIONS:
                raise SpecError(self.id, f"unknown relation '{relation}'")
        if self.kind is RuleKind.EXACT_COUNT:
            n = self.params["n"]
            if not isinstance(n, int) or isinstance(n, bool) or n < 0:
                raise SpecError(self.id, "count n must be an integer >= 0")
        page_range = self.params.get("page_range")
        if page_range is not None:
            if (
                not isinstance(page_range, Sequence)
                or len(page_range) != 2
                or page_range[0] > page_range[1]
                or page_range[0] < 1
            ):
                raise SpecError(self.id, f"bad page_range {page_range}")

    @property
    def page_range(self) -> tuple[int, int] | None:
        r = self.params.get("page_range")
        return (r[0], r[1]) if r is not None else None

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ConstraintRule":
        return cls(id=data["id"], kind=RuleKind(data["kind"]), params=data["params"])


@dataclass(frozen=True)
class Entity:
    id: str
    attributes: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class SceneGraph:
    """Structured facts for one page."""

    page: int
    entities: tuple[Entity, ...] = ()
    counts: Mapping[str, int] = field(default_factory=dict)
    relations: tuple[tuple[str, str, str], ...] = ()
    events: tuple[str, ...] = ()

    def __post_init__(self):
        ids = [e.id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise ValueError(f"page {self.page}: duplicate entity id")
        for obj, count in self.counts.items():
            if count < 0:
                raise ValueError(f"page {self.page}: negative count for {obj}")

    def entity(self, entity_id: str) -> Entity | None:
        for e in self.entities:
            if e.id == entity_id:
                return e
        return None

    def to_dict(self) -> dict:
        return {
            "page": self.page,
            "entities": [{"id": e.id, "attributes": dict(e.attributes)} for e in self.entities],
            "counts": dict(self.counts),
            "relations": [list(r) for r in self.relations],
            "events": list(self.events),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SceneGraph":
        return cls(
            page=data["page"],
            entities=tuple(
                Entity(id=e["id"], attributes=dict(e.get("attributes", {})))
                for e in data.get("entities", ())
            ),
            counts=dict(data.get("counts", {})),
            relations=tuple(tuple(r) for r in data.get("relations", ())),
            events=tuple(data.get("events", ())),
        )


@dataclass(frozen=True)
class RuleVerdict:
    rule_id: str
    satisfied: bool
    evidence: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        if not self.satisfied and not self.evidence:
            raise ValueError(f"{self.rule_id}: unsatisfied verdict needs evidence")

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "satisfied": self.satisfied,
            "evidence": [[page, fact] for page, fact in self.evidence],
        }


def _pages_in_range(
    rule: ConstraintRule, by_page: Mapping[int, SceneGraph]
) -> list[SceneGraph]:
    span = rule.page_range
    if span is None:
        return [by_page[p] for p in sorted(by_page)]
    graphs = []
    for page in range(span[0], span[1] + 1):
        if page not in by_page:
            raise MissingGraph(page)
        graphs.append(by_page[page])
    return graphs


def check_rules(
    graphs: Sequence[SceneGraph], rules: Sequence[ConstraintRule]
) -> list[RuleVerdict]:
    """Evaluate every rule against the scene graphs. Pure and deterministic:
    the same graphs and rules always produce identical verdicts."""
    by_page = {g.page: g for g in graphs}
    verdicts = []
    for rule in rules:
        evidence = _violations(rule, by_page)
        verdicts.append(RuleVerdict(
            rule_id=rule.id, satisfied=not evidence, evidence=tuple(evidence)
        ))
    return verdicts


def _violations(
    rule: ConstraintRule, by_page: Mapping[int, SceneGraph]
) -> list[tuple[int, str]]:
    kind = rule.kind
    p = rule.params
    evidence: list[tuple[int, str]] = []

    if kind is RuleKind.IDENTITY_ANCHOR:
        for graph in _pages_in_range(rule, by_page):
            entity = graph.entity(p["character_id"])
            if entity is None:
                continue
            actual = entity.attributes.get(p["attribute"])
            if actual != p["value"]:
                evidence.append((
                    graph.page,
                    f"{p['character_id']}.{p['attribute']} is "
                    f"{actual!r}, expected {p['value']!r}",
                ))

    elif kind is RuleKind.EXACT_COUNT:
        for graph in _pages_in_range(rule, by_page):
            actual = graph.counts.get(p["object"], 0)
            if actual != p["n"]:
                evidence.append((
                    graph.page, f"count of {p['object']} is {actual}, expected {p['n']}",
                ))

    elif kind is RuleKind.SPATIAL_RELATION:
        triple = (p["subject"], p["relation"], p["object"])
        for graph in _pages_in_range(rule, by_page):
            if graph.entity(p["subject"]) is None or graph.entity(p["object"]) is None:
                continue
            if triple not in graph.relations:
                evidence.append((
                    graph.page,
                    f"{p['subject']} not {p['relation']} {p['object']}",
                ))

    elif kind is RuleKind.TEMPORAL_ORDER:
        positions_a: list[tuple[int, int]] = []
        positions_b: list[tuple[int, int]] = []
        for graph in _pages_in_range(rule, by_page):
            for i, event in enumerate(graph.events):
                if event == p["event_a"]:
                    positions_a.append((graph.page, i))
                elif event == p["event_b"]:
                    positions_b.append((graph.page, i))
        if positions_a and positions_b:
            last_a = max(positions_a)
            first_b = min(positions_b)
            if last_a >= first_b:
                evidence.append((
                    last_a[0],
                    f"{p['event_a']} on page {last_a[0]} does not precede "
                    f"{p['event_b']} on page {first_b[0]}",
                ))

    elif kind is RuleKind.BINDING:
        for graph in _pages_in_range(rule, by_page):
            has_a = any(
                e.attributes.get(p["attribute_a"]) == p["value_a"] for e in graph.entities
            )
            has_b = any(
                e.attributes.get(p["attribute_b"]) == p["value_b"] for e in graph.entities
            )
            if has_a != has_b:
                present, absent = (
                    (f"{p['attribute_a']}={p['value_a']}", f"{p['attribute_b']}={p['value_b']}")
                    if has_a
                    else (f"{p['attribute_b']}={p['value_b']}", f"{p['attribute_a']}={p['value_a']}")
                )
                evidence.append((graph.page, f"{present} present without {absent}"))

    return evidence


def consistency_score(verdicts: Sequence[RuleVerdict]) -> float:
    """Satisfied constraints over total constraints, computed exactly."""
    if not verdicts:
        raise EmptyRuleSet("consistency is undefined for zero constraints")
    satisfied = sum(1 for v in verdicts if v.satisfied)
    return float(Fraction(satisfied, len(verdicts)))


@dataclass
class ViolationReport:
    per_kind: dict[str, dict] = field(default_factory=dict)
    per_page: dict[int, int] = field(default_factory=dict)
    recovery: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_kind": self.per_kind,
            "per_page": {str(k): v for k, v in sorted(self.per_page.items())},
            "recovery": self.recovery,
        }


def violation_stats(
    rounds: Sequence[Sequence[RuleVerdict]],
    rules: Sequence[ConstraintRule],
) -> ViolationReport:
    """Violation frequency per rule kind and per page (over the final
    round), plus a recovery flag per rule: violated in some round and
    satisfied in a later one."""
    report = ViolationReport()
    kind_by_rule = {r.id: r.kind.value for r in rules}
    if not rounds:
        return report

    final = rounds[-1]
    kind_totals: dict[str, int] = {}
    kind_violations: dict[str, int] = {}
    for verdict in final:
        kind = kind_by_rule.get(verdict.rule_id, "unknown")
        kind_totals[kind] = kind_totals.get(kind, 0) + 1
        if not verdict.satisfied:
            kind_violations[kind] = kind_violations.get(kind, 0) + 1
            for page, _fact in verdict.evidence:
                report.per_page[page] = report.per_page.get(page, 0) + 1
    for kind, total in sorted(kind_totals.items()):
        violations = kind_violations.get(kind, 0)
        report.per_kind[kind] = {
            "rules": total,
            "violations": violations,
            "frequency": violations / total,
        }

    if len(rounds) > 1:
        history: dict[str, list[bool]] = {}
        for round_verdicts in rounds:
            for verdict in round_verdicts:
                history.setdefault(verdict.rule_id, []).append(verdict.satisfied)
        for rule_id, states in history.items():
            recovered = any(
                not states[m] and any(states[m2] for m2 in range(m + 1, len(states)))
                for m in range(len(states))
            )
            report.recovery[rule_id] = recovered
    return report
