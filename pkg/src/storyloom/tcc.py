"""Stage 3 — whole-book continuity audit and selective repair.

The sequence director scores cross-page continuity and attributes
failures to a sparse set of problem pages. While the score is below the
sequence threshold and pages are flagged, exactly those pages re-enter
the page loop with global-context constraints and stricter reference
conditioning; everything else is carried forward untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

from .domain import (
    Acceptance,
    Book,
    PagePlan,
    PageResult,
    PromptState,
    RunConfig,
)
from .errors import SchemaError
from .gateway import AgentRequest, ModelGateway, Role, Stage
from .icr import AttemptHook, FeedbackSink, RefSet, refine_page

log = logging.getLogger(__name__)

GLOBAL_PREFIX = "GLOBAL: "


@dataclass(frozen=True)
class SequenceCritique:
    text: str
    page_indices: tuple[int, ...]
    character_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "page_indices": list(self.page_indices),
            "character_ids": list(self.character_ids),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SequenceCritique":
        return cls(
            text=data["text"],
            page_indices=tuple(data["page_indices"]),
            character_ids=tuple(data.get("character_ids", ())),
        )


@dataclass(frozen=True)
class SequenceAudit:
    """Global audit outcome: continuity score, critiques, flagged pages."""

    beta: float
    critiques: tuple[SequenceCritique, ...]
    problem_pages: frozenset[int]

    def __post_init__(self):
        for critique in self.critiques:
            if not set(critique.page_indices) & self.problem_pages:
                raise ValueError(
                    f"critique '{critique.text[:40]}' names no problem page"
                )

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "critiques": [c.to_dict() for c in self.critiques],
            "problem_pages": sorted(self.problem_pages),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SequenceAudit":
        return cls(
            beta=data["beta"],
            critiques=tuple(SequenceCritique.from_dict(c) for c in data.get("critiques", ())),
            problem_pages=frozenset(data.get("problem_pages", ())),
        )


@dataclass(frozen=True)
class RepairDirective:
    """Instructions for regenerating one flagged page."""

    page_index: int
    prompt: PromptState
    sheet_ids: tuple[str, ...]
    critiques: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "page_index": self.page_index,
            "prompt": self.prompt.to_dict(),
            "sheet_ids": list(self.sheet_ids),
            "critiques": list(self.critiques),
        }


def audit_sequence(gateway: ModelGateway, book: Book, style: str) -> SequenceAudit:
    """Run the sequence director over the full (text, image) sequence."""
    payload = {
        "pages": [
            {"index": p.index, "text": p.text, "image": p.image} for p in book.pages
        ],
        "style": style,
    }
    response = gateway.invoke(
        AgentRequest(Role.SEQUENCE_DIRECTOR, payload), stage=Stage.TCC
    )
    problem_pages = frozenset(response.payload["problem_pages"])
    for index in problem_pages:
        if not 1 <= index <= len(book.pages):
            raise SchemaError(
                "problem_pages", f"page {index} outside 1..{len(book.pages)}"
            )
    critiques = tuple(
        SequenceCritique(
            text=c["text"],
            page_indices=tuple(c["pages"]),
            character_ids=tuple(c.get("characters", ())),
        )
        for c in response.payload["critiques"]
    )
    try:
        return SequenceAudit(
            beta=float(response.payload["score"]),
            critiques=critiques,
            problem_pages=problem_pages,
        )
    except ValueError as exc:
        raise SchemaError("critiques", str(exc)) from exc


def plan_repairs(
    book: Book,
    audit: SequenceAudit,
    plan: PagePlan,
    *,
    override_pages: Iterable[int] | None = None,
) -> list[RepairDirective]:
    """Build a repair directive per flagged page: the page's base prompt
    plus a GLOBAL constraint line per critique naming it, with the sheets
    of every implicated character forced into the reference set on top of
    the page's own cast."""
    targets = sorted(set(override_pages) if override_pages is not None else audit.problem_pages)
    if not targets:
        raise ValueError("no problem pages to repair")
    directives: list[RepairDirective] = []
    sheet_by_char = {s.character_id: s.image for s in book.sheets}
    for index in targets:
        spec = plan.page(index)
        naming = [c for c in audit.critiques if index in c.page_indices]
        fragments: list[str] = []
        forced_ids: list[str] = list(spec.cast_ids)
        for critique in naming:
            fragment = GLOBAL_PREFIX + critique.text
            if fragment not in fragments:
                fragments.append(fragment)
            for char_id in critique.character_ids:
                if char_id in sheet_by_char and char_id not in forced_ids:
                    forced_ids.append(char_id)
        prompt = PromptState(base=spec.initial_prompt).extended(
            critique=fragments, bump_revision=False
        )
        directives.append(RepairDirective(
            page_index=index,
            prompt=prompt,
            sheet_ids=tuple(forced_ids),
            critiques=tuple(c.text for c in naming),
        ))
    return directives


RoundHook = Callable[[int, SequenceAudit], None]
Warn = Callable[[str], None]


def _repair_refs(
    directive: RepairDirective,
    book: Book,
    config: RunConfig,
) -> RefSet:
    sheets = tuple(s for s in book.sheets if s.character_id in set(directive.sheet_ids))
    window = config.context_window or 0
    earlier = [p for p in book.pages if p.index < directive.page_index]
    context = tuple(p.image for p in earlier[-window:]) if window else ()
    return RefSet(sheets=sheets, context=context)


def calibrate(
    gateway: ModelGateway,
    book: Book,
    config: RunConfig,
    plan: PagePlan,
    *,
    warn: Warn = lambda message: log.warning("%s", message),
    on_audit: RoundHook | None = None,
    on_attempt: AttemptHook | None = None,
    feedback: FeedbackSink | None = None,
    on_page_repaired: Callable[[PageResult], None] | None = None,
) -> tuple[Book, list[SequenceAudit]]:
    """Audit-and-repair rounds until convergence or the round limit.

    Convergence is (beta >= tau_beta) or an empty problem set. With
    sequence_rounds=0 the stage is disabled outright: no audit happens and
    the book passes through unchanged. Round-limit exhaustion is a warning,
    not an error. Returns the final book (round = repair rounds performed)
    plus every audit taken.
    """
    rounds_limit = config.sequence_rounds or 0
    if rounds_limit == 0:
        return book, []

    audits: list[SequenceAudit] = []
    current = book
    for round_no in range(rounds_limit + 1):
        audit = audit_sequence(gateway, current, current.style)
        audits.append(audit)
        if on_audit is not None:
            on_audit(round_no, audit)
        if audit.beta >= config.tau_beta or not audit.problem_pages:
            return current, audits
        if round_no == rounds_limit:
            warn(
                f"sequence round limit reached with pages "
                f"{sorted(audit.problem_pages)} still flagged (beta={audit.beta})"
            )
            return current, audits

        final_round = round_no == rounds_limit - 1
        directives = plan_repairs(current, audit, plan)
        for directive in directives:
            refs = _repair_refs(directive, current, config)
            result = refine_page(
                gateway,
                plan.page(directive.page_index),
                refs,
                config,
                style=current.style,
                strict=True,
                allow_fallback=final_round,
                prompt=directive.prompt,
                stage=Stage.TCC,
                on_attempt=on_attempt,
                feedback=feedback,
            )
            if result is None:
                warn(
                    f"page {directive.page_index}: repair round {round_no} "
                    "did not clear thresholds; keeping the previous page"
                )
                continue
            repaired = replace(result, acceptance=Acceptance.REPAIRED)
            current = current.with_page(repaired)
            if on_page_repaired is not None:
                on_page_repaired(repaired)
        current = replace(current, round=round_no + 1)
    return current, audits
