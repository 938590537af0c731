"""Stage 1 — draft refinement, safety clearance, cast extraction, character
sheet rendering, and the page plan.

The cast and its reference sheets are always established before any page
image exists: they are the ground truth the identity checks compare
against later.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

from .domain import (
    CastList,
    CharacterProfile,
    CharacterSheet,
    MAX_CAST,
    PagePlan,
    PageSpec,
    RefinedStory,
    RefineMode,
    SheetProvenance,
    StoryDraft,
)
from .errors import PlanMismatch
from .gateway import AgentRequest, ModelGateway, Role, Stage
from .safety import DEFAULT_SANITIZE_ROUNDS, sanitize_text

log = logging.getLogger(__name__)

Warn = Callable[[str], None]


def _default_warn(message: str) -> None:
    log.warning("%s", message)


@dataclass(frozen=True)
class VasOutput:
    story: RefinedStory
    cast: CastList
    sheets: tuple[CharacterSheet, ...]
    plan: PagePlan


def refine_draft(
    gateway: ModelGateway,
    draft: StoryDraft,
    *,
    max_safety_rounds: int = DEFAULT_SANITIZE_ROUNDS,
) -> RefinedStory:
    """Rewrite the draft to match the page count, then clear it through the
    text-safety loop. The returned story is always safety_cleared."""
    response = gateway.invoke(
        AgentRequest(Role.REVIEWER_REFINER, {
            "draft": draft.text,
            "page_count": draft.page_count,
            "style": draft.style,
        }),
        stage=Stage.VAS,
    )
    cleared = sanitize_text(
        gateway,
        response.payload["text"],
        page_count=draft.page_count,
        style=draft.style,
        max_rounds=max_safety_rounds,
    )
    return RefinedStory(
        text=cleared,
        mode=RefineMode(response.payload["mode"]),
        refiner_feedback=response.payload["feedback"],
        safety_cleared=True,
    )


def extract_characters(
    gateway: ModelGateway,
    story: RefinedStory,
    style: str,
    *,
    warn: Warn = _default_warn,
) -> CastList:
    """Identify the recurring cast. An over-long backend list is truncated
    to the first MAX_CAST entries; an empty list is legal and downstream
    stages simply run with no identity references."""
    if not story.safety_cleared:
        raise ValueError("cast extraction requires a safety-cleared story")
    response = gateway.invoke(
        AgentRequest(Role.CHARACTER_EXTRACTOR, {"story": story.text, "style": style}),
        stage=Stage.VAS,
    )
    raw = response.payload["characters"]
    if len(raw) > MAX_CAST:
        warn(f"extractor returned {len(raw)} characters; keeping the first {MAX_CAST}")
        raw = raw[:MAX_CAST]
    return CastList(characters=tuple(
        CharacterProfile(
            id=c["id"],
            name=c["name"],
            descriptor=c["descriptor"],
            notes=c.get("notes", ""),
        )
        for c in raw
    ))


def render_sheets(
    gateway: ModelGateway,
    cast: CastList,
    style: str,
    inspiration: str | None = None,
) -> tuple[CharacterSheet, ...]:
    """Render one neutral-background reference sheet per cast member. A
    user-provided inspiration image becomes the first member's sheet
    directly, skipping that render call."""
    sheets: list[CharacterSheet] = []
    for position, profile in enumerate(cast.characters):
        if position == 0 and inspiration is not None:
            gateway.store.require(inspiration)
            sheets.append(CharacterSheet(
                character_id=profile.id,
                image=inspiration,
                provenance=SheetProvenance.USER_PROVIDED,
            ))
            continue
        image, _ = gateway.render_sheet(profile.descriptor, style)
        sheets.append(CharacterSheet(character_id=profile.id, image=image))
    return tuple(sheets)


def _match_cast(text: str, cast: CastList) -> tuple[str, ...]:
    """Fallback page-entity detection: case-insensitive name/id substring
    match over the page text."""
    lowered = text.lower()
    return tuple(
        c.id for c in cast.characters
        if c.name.lower() in lowered or c.id.lower() in lowered
    )


def plan_pages(
    gateway: ModelGateway,
    story: RefinedStory,
    inspiration: str | None,
    page_count: int,
    style: str,
    cast: CastList,
    *,
    warn: Warn = _default_warn,
) -> PagePlan:
    """Decompose the story into exactly page_count pages.

    A wrong-length plan gets one corrective re-ask before PlanMismatch.
    Every initial prompt is guaranteed to contain the style descriptor
    verbatim, and cast ids are cross-checked against the cast list (with
    a name-match fallback when the planner omits them).
    """
    if not story.safety_cleared:
        raise ValueError("page planning requires a safety-cleared story")
    payload: dict = {"story": story.text, "page_count": page_count, "style": style}
    if inspiration is not None:
        payload["inspiration"] = inspiration

    response = gateway.invoke(AgentRequest(Role.PAGE_PLANNER, payload), stage=Stage.VAS)
    pages = response.payload["pages"]
    if len(pages) != page_count:
        warn(f"planner returned {len(pages)} pages, re-asking for {page_count}")
        retry_payload = dict(payload)
        retry_payload["note"] = f"return exactly {page_count} pages"
        response = gateway.invoke(
            AgentRequest(Role.PAGE_PLANNER, retry_payload), stage=Stage.VAS
        )
        pages = response.payload["pages"]
        if len(pages) != page_count:
            raise PlanMismatch(wanted=page_count, got=len(pages))

    specs: list[PageSpec] = []
    known = set(cast.ids())
    for position, page in enumerate(pages, start=1):
        prompt = page["prompt"]
        if style and style not in prompt:
            prompt = f"{prompt}, {style}"
        raw_ids = page.get("cast_ids")
        if raw_ids:
            cast_ids = []
            for cid in raw_ids:
                if cid in known:
                    cast_ids.append(cid)
                else:
                    warn(f"page {position}: planner named unknown character '{cid}', dropped")
        else:
            cast_ids = list(_match_cast(page["text"], cast))
        specs.append(PageSpec(
            index=position,
            text=page["text"],
            initial_prompt=prompt,
            cast_ids=tuple(cast_ids),
        ))
    return PagePlan(pages=tuple(specs))


def run_vas(
    gateway: ModelGateway,
    draft: StoryDraft,
    *,
    inspiration: str | None = None,
    warn: Warn = _default_warn,
) -> VasOutput:
    """The whole stage in order: refine, clear safety, extract cast, render
    sheets, plan pages."""
    story = refine_draft(gateway, draft)
    cast = extract_characters(gateway, story, draft.style, warn=warn)
    sheets = render_sheets(gateway, cast, draft.style, inspiration=inspiration)
    plan = plan_pages(
        gateway, story, inspiration, draft.page_count, draft.style, cast, warn=warn
    )
    return VasOutput(story=story, cast=cast, sheets=sheets, plan=plan)
