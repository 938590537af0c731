"""Suite evaluation over persisted runs, with delimited and figure output.

In deterministic mode the image artifacts are structured stand-ins that
embed a scene graph, so checking is exact. Against real image backends a
caller can plug in an extractor that derives graphs some other way; that
path is best-effort and sits outside the deterministic guarantees.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from ..errors import MissingGraph
from ..gateway import ArtifactStore
from ..reporting import bar_figure, write_csv
from ..service.store import RunPersistence
from .rules import (
    RuleVerdict,
    SceneGraph,
    check_rules,
    consistency_score,
    violation_stats,
)
from .specs import StorySpec

log = logging.getLogger(__name__)

GraphExtractor = Callable[[RunPersistence], list[SceneGraph]]


def embedded_graphs(persistence: RunPersistence) -> list[SceneGraph]:
    """Read the scene graph embedded in each page's image stand-in."""
    book = persistence.book()
    if book is None:
        raise MissingGraph(1)
    artifacts = ArtifactStore(persistence.root)
    graphs = []
    for page in book.pages:
        doc = artifacts.document(page.image)
        raw = doc.get("scene_graph")
        if raw is None:
            raise MissingGraph(page.index)
        graphs.append(SceneGraph.from_dict({"page": page.index, **raw}))
    return graphs


@dataclass
class StoryEvaluation:
    story_id: str
    pages: int
    rules: int
    satisfied: int
    consistency: float | None
    verdicts: list[RuleVerdict] = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "story_id": self.story_id,
            "pages": self.pages,
            "rules": self.rules,
            "satisfied": self.satisfied,
            "consistency": self.consistency,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "note": self.note,
        }


@dataclass
class SuiteReport:
    stories: list[StoryEvaluation] = field(default_factory=list)

    @property
    def overall_consistency(self) -> float | None:
        verdicts = [v for s in self.stories for v in s.verdicts]
        if not verdicts:
            return None
        return consistency_score(verdicts)

    def to_dict(self) -> dict:
        return {
            "overall_consistency": self.overall_consistency,
            "stories": [s.to_dict() for s in self.stories],
        }


def evaluate_story(spec: StorySpec, graphs: Sequence[SceneGraph]) -> StoryEvaluation:
    rules = spec.all_rules()
    verdicts = check_rules(graphs, rules)
    satisfied = sum(1 for v in verdicts if v.satisfied)
    return StoryEvaluation(
        story_id=spec.story_id,
        pages=spec.pages,
        rules=len(rules),
        satisfied=satisfied,
        consistency=consistency_score(verdicts),
        verdicts=verdicts,
    )


def evaluate_suite(
    specs: Sequence[StorySpec],
    runs_by_story: Mapping[str, RunPersistence],
    extractor: GraphExtractor = embedded_graphs,
) -> SuiteReport:
    """Evaluate every story that has a matching run; stories without one
    (or without extractable graphs) are reported as skipped."""
    report = SuiteReport()
    for spec in specs:
        persistence = runs_by_story.get(spec.story_id)
        if persistence is None:
            report.stories.append(StoryEvaluation(
                story_id=spec.story_id, pages=spec.pages,
                rules=len(spec.all_rules()), satisfied=0,
                consistency=None, note="no run",
            ))
            continue
        try:
            graphs = extractor(persistence)
            report.stories.append(evaluate_story(spec, graphs))
        except MissingGraph as exc:
            log.warning("%s: %s", spec.story_id, exc)
            report.stories.append(StoryEvaluation(
                story_id=spec.story_id, pages=spec.pages,
                rules=len(spec.all_rules()), satisfied=0,
                consistency=None, note=str(exc),
            ))
    return report


def write_suite_report(
    report: SuiteReport,
    specs: Sequence[StorySpec],
    out_dir: Path | str,
    figures: bool = True,
) -> list[Path]:
    """report.json + summary.csv + verdicts.csv, and the two standard
    figures (consistency per story, violation frequency per rule kind)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    written.append(path)

    written.append(write_csv(
        out / "summary.csv",
        ["story_id", "pages", "rules", "satisfied", "consistency", "note"],
        [
            [s.story_id, s.pages, s.rules, s.satisfied,
             "" if s.consistency is None else f"{s.consistency:.6f}", s.note]
            for s in report.stories
        ],
    ))

    rules_by_id = {r.id: r for spec in specs for r in spec.all_rules()}
    verdict_rows = []
    for story in report.stories:
        for verdict in story.verdicts:
            rule = rules_by_id.get(verdict.rule_id)
            verdict_rows.append([
                story.story_id,
                verdict.rule_id,
                rule.kind.value if rule else "",
                int(verdict.satisfied),
                "; ".join(f"p{page}: {fact}" for page, fact in verdict.evidence),
            ])
    written.append(write_csv(
        out / "verdicts.csv",
        ["story_id", "rule_id", "kind", "satisfied", "evidence"],
        verdict_rows,
    ))

    if figures:
        scored = [s for s in report.stories if s.consistency is not None]
        if scored:
            written.append(bar_figure(
                out / "consistency_by_story.png",
                [s.story_id.removeprefix("story_") for s in scored],
                [s.consistency for s in scored],
                title="Consistency by story",
                ylabel="satisfied / total",
                ylim=(0.0, 1.05),
            ))
        evaluated = [s for s in report.stories if s.verdicts]
        if evaluated:
            all_rules = [rules_by_id[v.rule_id] for s in evaluated for v in s.verdicts
                         if v.rule_id in rules_by_id]
            rounds = [[v for s in evaluated for v in s.verdicts]]
            stats = violation_stats(rounds, all_rules)
            if stats.per_kind:
                kinds = sorted(stats.per_kind)
                written.append(bar_figure(
                    out / "violation_frequency.png",
                    kinds,
                    [stats.per_kind[k]["frequency"] for k in kinds],
                    title="Violation frequency by rule kind",
                    ylabel="violated / total",
                    ylim=(0.0, 1.05),
                    color="#c44e52",
                ))
    return written
