"""Constraint benchmark: rule language, scene-graph checking, suite."""

from .report import (
    SuiteReport,
    embedded_graphs,
    evaluate_story,
    evaluate_suite,
    write_suite_report,
)
from .rules import (
    ConstraintRule,
    Entity,
    RuleKind,
    RuleVerdict,
    SceneGraph,
    ViolationReport,
    check_rules,
    consistency_score,
    violation_stats,
)
from .specs import RuleGroup, StorySpec, load_story_spec, load_suite, shipped_suite

__all__ = [
    "ConstraintRule",
    "Entity",
    "RuleGroup",
    "RuleKind",
    "RuleVerdict",
    "SceneGraph",
    "StorySpec",
    "SuiteReport",
    "ViolationReport",
    "check_rules",
    "consistency_score",
    "embedded_graphs",
    "evaluate_story",
    "evaluate_suite",
    "load_story_spec",
    "load_suite",
    "shipped_suite",
    "violation_stats",
    "write_suite_report",
]
