"""Benchmark story specs: loading, validation, and the shipped suite."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from ..errors import SpecError
from .rules import ConstraintRule

SCHEMA_TAG = "storyloom-bench/1"
SUITE_SIZE = 16
MIN_PAGES = 5
MAX_PAGES = 20


@dataclass(frozen=True)
class RuleGroup:
    name: str
    rules: tuple[ConstraintRule, ...]

    def to_dict(self) -> dict:
        return {"name": self.name, "rules": [r.to_dict() for r in self.rules]}


@dataclass(frozen=True)
class StorySpec:
    story_id: str
    pages: int
    characters: tuple[str, ...]
    rule_groups: tuple[RuleGroup, ...]
    draft: str
    style: str

    def all_rules(self) -> tuple[ConstraintRule, ...]:
        return tuple(rule for group in self.rule_groups for rule in group.rules)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_TAG,
            "story_id": self.story_id,
            "pages": self.pages,
            "characters": list(self.characters),
            "rule_groups": [g.to_dict() for g in self.rule_groups],
            "draft": self.draft,
            "style": self.style,
        }


def load_story_spec(document: Mapping | Path | str) -> StorySpec:
    """Parse and validate one story spec document (a mapping, a path, or
    raw JSON text)."""
    if isinstance(document, (Path, str)):
        path = Path(document)
        if path.exists():
            raw = path.read_text()
            location = path.name
        else:
            raw = str(document)
            location = "<inline>"
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SpecError(location, f"not valid JSON: {exc}") from exc
    else:
        data = document
        location = str(data.get("story_id", "<mapping>"))

    if data.get("schema") != SCHEMA_TAG:
        raise SpecError(location, f"schema tag must be '{SCHEMA_TAG}'")
    story_id = data.get("story_id")
    if not story_id:
        raise SpecError(location, "missing story_id")
    pages = data.get("pages")
    if not isinstance(pages, int) or not MIN_PAGES <= pages <= MAX_PAGES:
        raise SpecError(story_id, f"pages must be an integer in {MIN_PAGES}..{MAX_PAGES}")
    characters = tuple(data.get("characters", ()))
    draft = data.get("draft", "")
    if not draft.strip():
        raise SpecError(story_id, "missing draft text")

    groups = []
    raw_groups = data.get("rule_groups", ())
    if not raw_groups:
        raise SpecError(story_id, "at least one rule group is required")
    seen_rule_ids: set[str] = set()
    for g in raw_groups:
        rules = []
        for r in g.get("rules", ()):
            rule = ConstraintRule.from_dict(r)
            if rule.id in seen_rule_ids:
                raise SpecError(story_id, f"duplicate rule id {rule.id}")
            seen_rule_ids.add(rule.id)
            span = rule.page_range
            if span is not None and span[1] > pages:
                raise SpecError(
                    story_id,
                    f"rule {rule.id} page_range {list(span)} exceeds {pages} pages",
                )
            rules.append(rule)
        if not rules:
            raise SpecError(story_id, f"rule group '{g.get('name')}' is empty")
        groups.append(RuleGroup(name=g.get("name", ""), rules=tuple(rules)))

    return StorySpec(
        story_id=story_id,
        pages=pages,
        characters=characters,
        rule_groups=tuple(groups),
        draft=draft,
        style=data.get("style", ""),
    )


def shipped_suite() -> list[StorySpec]:
    """The sixteen stories shipped with the package, ordered by id."""
    suite_dir = resources.files("storyloom.bench") / "suite"
    specs = []
    for entry in sorted(suite_dir.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            specs.append(load_story_spec(json.loads(entry.read_text())))
    return specs


def load_suite(directory: Path | str) -> list[StorySpec]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise SpecError(str(directory), "no story specs found")
    return [load_story_spec(p) for p in paths]
