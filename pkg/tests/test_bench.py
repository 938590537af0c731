import json
import random

import pytest

from storyloom.bench import (
    ConstraintRule,
    Entity,
    RuleKind,
    SceneGraph,
    check_rules,
    consistency_score,
    load_story_spec,
    shipped_suite,
    violation_stats,
)
from storyloom.bench.rules import RuleVerdict
from storyloom.errors import EmptyRuleSet, MissingGraph, SpecError

from oracles import check_rule_oracle


def graph(page, entities=(), counts=None, relations=(), events=()):
    return SceneGraph(
        page=page,
        entities=tuple(Entity(id=e[0], attributes=e[1] if len(e) > 1 else {}) for e in entities),
        counts=counts or {},
        relations=tuple(relations),
        events=tuple(events),
    )


def rule(rid, kind, **params):
    return ConstraintRule(id=rid, kind=RuleKind(kind), params=params)


class TestIdentityAnchor:
    def test_uniform_satisfied(self):
        graphs = [
            graph(i, entities=[("milo", {"scarf": "green"})]) for i in range(1, 4)
        ]
        verdicts = check_rules(graphs, [rule("r1", "identity_anchor",
                                             character_id="milo", attribute="scarf", value="green")])
        assert verdicts[0].satisfied

    def test_absent_pages_vacuous(self):
        graphs = [graph(1, entities=[("milo", {"scarf": "green"})]), graph(2)]
        verdicts = check_rules(graphs, [rule("r1", "identity_anchor",
                                             character_id="milo", attribute="scarf", value="green")])
        assert verdicts[0].satisfied

    def test_drift_names_page(self):
        graphs = [
            graph(1, entities=[("milo", {"scarf": "green"})]),
            graph(2, entities=[("milo", {"scarf": "blue"})]),
        ]
        verdicts = check_rules(graphs, [rule("r1", "identity_anchor",
                                             character_id="milo", attribute="scarf", value="green")])
        assert not verdicts[0].satisfied
        assert verdicts[0].evidence[0][0] == 2


class TestExactCount:
    def test_violation_names_page(self):
        graphs = [graph(1, counts={"tickets": 14}), graph(2, counts={"tickets": 13})]
        verdicts = check_rules(graphs, [rule("r1", "exact_count", object="tickets", n=14)])
        assert not verdicts[0].satisfied
        assert verdicts[0].evidence == ((2, "count of tickets is 13, expected 14"),)

    def test_absent_object_counts_as_zero(self):
        verdicts = check_rules([graph(1)], [rule("r1", "exact_count", object="tickets", n=0)])
        assert verdicts[0].satisfied

    def test_missing_graph(self):
        with pytest.raises(MissingGraph):
            check_rules([graph(1)], [rule("r1", "exact_count",
                                          object="x", n=1, page_range=[1, 3])])


class TestSpatial:
    def test_violated_then_restored_still_unsatisfied(self):
        rel = ("chest", "right_of", "stage")
        graphs = [
            graph(1, entities=[("chest",), ("stage",)], relations=[rel]),
            graph(2, entities=[("chest",), ("stage",)], relations=[("chest", "left_of", "stage")]),
            graph(3, entities=[("chest",), ("stage",)], relations=[rel]),
        ]
        verdicts = check_rules(graphs, [rule("r1", "spatial_relation",
                                             subject="chest", relation="right_of", object="stage")])
        assert not verdicts[0].satisfied
        assert [page for page, _ in verdicts[0].evidence] == [2]

    def test_pages_without_both_entities_vacuous(self):
        graphs = [graph(1, entities=[("chest",)]), graph(2)]
        verdicts = check_rules(graphs, [rule("r1", "spatial_relation",
                                             subject="chest", relation="east", object="stage")])
        assert verdicts[0].satisfied

    def test_unknown_relation_rejected(self):
        with pytest.raises(SpecError):
            rule("r1", "spatial_relation", subject="a", relation="above", object="b")


class TestTemporal:
    def test_ordered(self):
        graphs = [graph(1, events=["wake"]), graph(2, events=["eat"])]
        verdicts = check_rules(graphs, [rule("r1", "temporal_order", event_a="wake", event_b="eat")])
        assert verdicts[0].satisfied

    def test_same_page_list_order(self):
        graphs = [graph(1, events=["eat", "wake"])]
        verdicts = check_rules(graphs, [rule("r1", "temporal_order", event_a="wake", event_b="eat")])
        assert not verdicts[0].satisfied

    def test_vacuous_when_one_side_missing(self):
        graphs = [graph(1, events=["wake"])]
        verdicts = check_rules(graphs, [rule("r1", "temporal_order", event_a="wake", event_b="eat")])
        assert verdicts[0].satisfied


class TestBinding:
    def test_biconditional(self):
        good = graph(1, entities=[("bin", {"color": "red"}), ("tickets", {"hue": "green"})])
        bad = graph(2, entities=[("bin", {"color": "red"})])
        verdicts = check_rules([good, bad], [rule("r1", "binding",
                                                  attribute_a="color", value_a="red",
                                                  attribute_b="hue", value_b="green")])
        assert not verdicts[0].satisfied
        assert verdicts[0].evidence[0][0] == 2

    def test_both_absent_fine(self):
        verdicts = check_rules([graph(1)], [rule("r1", "binding",
                                                 attribute_a="color", value_a="red",
                                                 attribute_b="hue", value_b="green")])
        assert verdicts[0].satisfied


class TestConsistencyScore:
    def _verdicts(self, flags):
        return [
            RuleVerdict(rule_id=f"r{i}", satisfied=s, evidence=() if s else ((1, "x"),))
            for i, s in enumerate(flags)
        ]

    def test_ratio(self):
        assert consistency_score(self._verdicts([True, True, True, False])) == 0.75

    def test_all_satisfied(self):
        assert consistency_score(self._verdicts([True] * 5)) == 1.0

    def test_zero_rules(self):
        with pytest.raises(EmptyRuleSet):
            consistency_score([])


class TestViolationStats:
    def test_frequency(self):
        rules = [rule(f"r{i}", "spatial_relation", subject="a", relation="east", object="b")
                 for i in range(5)]
        verdicts = [
            RuleVerdict(rule_id=f"r{i}", satisfied=i >= 2, evidence=() if i >= 2 else ((1, "x"),))
            for i in range(5)
        ]
        report = violation_stats([verdicts], rules)
        assert report.per_kind["spatial_relation"]["frequency"] == pytest.approx(0.4)

    def test_recovery_across_rounds(self):
        r = [rule("r1", "exact_count", object="x", n=1)]
        round0 = [RuleVerdict(rule_id="r1", satisfied=False, evidence=((1, "x"),))]
        round1 = [RuleVerdict(rule_id="r1", satisfied=True)]
        report = violation_stats([round0, round1], r)
        assert report.recovery["r1"] is True

    def test_empty(self):
        report = violation_stats([], [])
        assert report.per_kind == {} and report.per_page == {}


def random_instance(rng: random.Random):
    """A small random world: <=5 pages, <=6 rules, tiny vocабulary."""
    pages = rng.randint(1, 5)
    chars = ["ada", "bo", "cyr"]
    attrs = ["scarf", "hat"]
    values = ["red", "green", "blue"]
    objects = ["apple", "coin"]
    events = ["wake", "walk", "eat"]
    relations = ["left_of", "right_of", "east"]

    graphs = []
    for page in range(1, pages + 1):
        entities = []
        for c in chars:
            if rng.random() < 0.7:
                entities.append({
                    "id": c,
                    "attributes": {a: rng.choice(values) for a in attrs if rng.random() < 0.8},
                })
        rels = []
        for _ in range(rng.randint(0, 3)):
            a, b = rng.sample(chars, 2)
            rels.append([a, rng.choice(relations), b])
        graphs.append({
            "page": page,
            "entities": entities,
            "counts": {o: rng.randint(0, 3) for o in objects if rng.random() < 0.7},
            "relations": rels,
            "events": [rng.choice(events) for _ in range(rng.randint(0, 3))],
        })

    rules = []
    for i in range(rng.randint(1, 6)):
        kind = rng.choice(list(RuleKind)).value
        if kind == "identity_anchor":
            params = {"character_id": rng.choice(chars), "attribute": rng.choice(attrs),
                      "value": rng.choice(values)}
        elif kind == "exact_count":
            params = {"object": rng.choice(objects), "n": rng.randint(0, 3)}
            if rng.random() < 0.5:
                lo = rng.randint(1, pages)
                params["page_range"] = [lo, rng.randint(lo, pages)]
        elif kind == "spatial_relation":
            a, b = rng.sample(chars, 2)
            params = {"subject": a, "relation": rng.choice(relations), "object": b}
        elif kind == "temporal_order":
            a, b = rng.sample(events, 2)
            params = {"event_a": a, "event_b": b}
        else:
            params = {"attribute_a": rng.choice(attrs), "value_a": rng.choice(values),
                      "attribute_b": rng.choice(attrs), "value_b": rng.choice(values)}
        rules.append({"id": f"r{i}", "kind": kind, "params": params})
    return graphs, rules


class TestOracleEquivalence:
    def test_random_instances(self):
        rng = random.Random(42)
        for _ in range(300):
            raw_graphs, raw_rules = random_instance(rng)
            graphs = [SceneGraph.from_dict(g) for g in raw_graphs]
            rules = [ConstraintRule.from_dict(r) for r in raw_rules]
            verdicts = check_rules(graphs, rules)
            for verdict, raw_rule in zip(verdicts, raw_rules):
                expected_ok, expected_pages = check_rule_oracle(raw_graphs, raw_rule)
                assert verdict.satisfied == expected_ok, (raw_rule, verdict)
                if not verdict.satisfied:
                    assert {p for p, _ in verdict.evidence} <= expected_pages

    def test_determinism(self):
        rng = random.Random(7)
        raw_graphs, raw_rules = random_instance(rng)
        graphs = [SceneGraph.from_dict(g) for g in raw_graphs]
        rules = [ConstraintRule.from_dict(r) for r in raw_rules]
        first = [v.to_dict() for v in check_rules(graphs, rules)]
        second = [v.to_dict() for v in check_rules(graphs, rules)]
        assert first == second


class TestSpecs:
    def test_shipped_suite_structure(self):
        suite = shipped_suite()
        assert len(suite) == 16
        table = {
            "story_01": (5, 2, 3), "story_02": (6, 4, 2), "story_03": (7, 1, 1),
            "story_04": (8, 3, 3), "story_05": (9, 2, 2), "story_06": (10, 1, 2),
            "story_07": (11, 3, 2), "story_08": (12, 1, 2), "story_09": (13, 1, 1),
            "story_10": (14, 2, 4), "story_11": (15, 2, 4), "story_12": (16, 2, 4),
            "story_13": (17, 2, 4), "story_14": (18, 2, 4), "story_15": (19, 2, 4),
            "story_16": (20, 3, 5),
        }
        for spec in suite:
            pages, characters, groups = table[spec.story_id]
            assert spec.pages == pages
            assert len(spec.characters) == characters
            assert len(spec.rule_groups) == groups

    def test_story_1_spatial_only(self):
        spec = shipped_suite()[0]
        assert {r.kind for r in spec.all_rules()} == {RuleKind.SPATIAL_RELATION}

    def test_page_range_outside_pages_rejected(self):
        doc = shipped_suite()[0].to_dict()
        doc["rule_groups"][0]["rules"][0]["params"]["page_range"] = [1, 9]
        with pytest.raises(SpecError):
            load_story_spec(doc)

    def test_bad_schema_tag(self):
        doc = shipped_suite()[0].to_dict()
        doc["schema"] = "other/1"
        with pytest.raises(SpecError):
            load_story_spec(doc)

    def test_malformed_json_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(SpecError):
            load_story_spec(path)
