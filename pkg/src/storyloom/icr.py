"""Stage 2 — the per-page budgeted generate-verify-revise loop.

Each attempt: generate an image, audit it for safety, then (only if safe)
run the frame and identity checks. Unsafe candidates never reach the
directors: they cannot be accepted, and the prompt update for them uses
only the safety reason. A candidate is accepted when it is safe and both
scores clear their thresholds; when the budget runs out, the best safe
candidate wins instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .domain import (
    Acceptance,
    CastList,
    CharacterSheet,
    MemorySource,
    PageMemory,
    PageResult,
    PageSpec,
    PromptState,
    RunConfig,
    VerificationBundle,
)
from .errors import NoSafeCandidate
from .gateway import AgentRequest, ModelGateway, Role, Stage
from .safety import audit_image, safety_negatives

log = logging.getLogger(__name__)

ENSURE_PREFIX = "ENSURE: "


@dataclass(frozen=True)
class AttemptRecord:
    """One generation attempt: the prompt it used, the image it produced,
    and the verification outcome."""

    revision: int
    prompt: PromptState
    image: str
    bundle: VerificationBundle

    @property
    def score_sum(self) -> float:
        return self.bundle.frame_score + self.bundle.identity_score

    def to_dict(self) -> dict:
        return {
            "revision": self.revision,
            "prompt": self.prompt.to_dict(),
            "image": self.image,
            "bundle": self.bundle.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttemptRecord":
        return cls(
            revision=data["revision"],
            prompt=PromptState.from_dict(data["prompt"]),
            image=data["image"],
            bundle=VerificationBundle.from_dict(data["bundle"]),
        )


@dataclass(frozen=True)
class RefSet:
    """Visual references for one page: the cast's sheets plus a short
    window of recently accepted page images."""

    sheets: tuple[CharacterSheet, ...] = ()
    context: tuple[str, ...] = ()

    def ref_ids(self) -> tuple[str, ...]:
        return tuple(s.image for s in self.sheets) + self.context


def retrieve_refs(
    page: PageSpec,
    cast: CastList,
    sheets: Sequence[CharacterSheet],
    accepted_pages: Sequence[PageResult],
    context_window: int,
) -> RefSet:
    """Sheets for the page's cast plus the last context_window accepted
    page images before this page. Empty is legal."""
    wanted = set(page.cast_ids)
    page_sheets = tuple(s for s in sheets if s.character_id in wanted)
    earlier = sorted(
        (p for p in accepted_pages if p.index < page.index),
        key=lambda p: p.index,
    )
    context = tuple(p.image for p in earlier[-context_window:]) if context_window else ()
    return RefSet(sheets=page_sheets, context=context)


def verify_frame(
    gateway: ModelGateway,
    page_text: str,
    image: str,
    *,
    page_index: int | None = None,
    stage: Stage = Stage.ICR,
) -> tuple[float, tuple[str, ...]]:
    response = gateway.invoke(
        AgentRequest(Role.FRAME_DIRECTOR, {"page_text": page_text, "image": image}),
        stage=stage,
        page_index=page_index,
    )
    return float(response.payload["score"]), tuple(response.payload["issues"])


def verify_identity(
    gateway: ModelGateway,
    page_text: str,
    image: str,
    sheets: Sequence[CharacterSheet],
    style: str,
    *,
    page_index: int | None = None,
    stage: Stage = Stage.ICR,
) -> tuple[float, tuple[str, ...]]:
    # no references: nothing to drift from, vacuously on-model, no call
    if not sheets:
        return 1.0, ()
    response = gateway.invoke(
        AgentRequest(Role.IDENTITY_DIRECTOR, {
            "page_text": page_text,
            "image": image,
            "sheets": [s.image for s in sheets],
            "style": style,
        }),
        stage=stage,
        page_index=page_index,
    )
    return float(response.payload["score"]), tuple(response.payload["issues"])


def revise_prompt(
    prompt: PromptState,
    bundle: VerificationBundle,
    memory: PageMemory,
) -> tuple[PromptState, PageMemory]:
    """The prompt-update law for a rejected attempt.

    Unsafe image: the safety reason becomes negative constraints appended
    to the safety section, and nothing touches the critique section.
    Safe-but-rejected: the current frame/identity issues are pooled with
    every remembered critique issue, deduplicated, and appended to the
    critique section as ENSURE lines. Exactly one branch runs, the
    revision counter advances, and the memory gains one entry (tagged
    safety for unsafe attempts, else by the dominant critique channel).
    """
    if not bundle.image_safety.safe:
        reason = bundle.image_safety.reason
        new_prompt = prompt.extended(safety=safety_negatives(reason))
        new_memory = memory.record(prompt.revision, (reason,), MemorySource.SAFETY)
        return new_prompt, new_memory

    current: list[str] = []
    for issue in (*bundle.frame_issues, *bundle.identity_issues):
        if issue not in current:
            current.append(issue)
    pool = list(current)
    for issue in memory.critique_issues():
        if issue not in pool:
            pool.append(issue)
    fragments = tuple(ENSURE_PREFIX + issue for issue in pool)
    new_prompt = prompt.extended(critique=fragments)
    source = MemorySource.FRAME if bundle.frame_issues or not bundle.identity_issues else MemorySource.IDENTITY
    new_memory = memory.record(prompt.revision, tuple(current), source)
    return new_prompt, new_memory


def select_fallback(
    attempts: Sequence[AttemptRecord],
    *,
    page_index: int = 0,
) -> AttemptRecord:
    """Best safe candidate by frame+identity score sum; ties go to the
    earliest attempt."""
    if not attempts:
        raise ValueError("no attempts recorded")
    best: AttemptRecord | None = None
    for attempt in attempts:
        if not attempt.bundle.image_safety.safe:
            continue
        if best is None or attempt.score_sum > best.score_sum:
            best = attempt
    if best is None:
        raise NoSafeCandidate(page_index)
    return best


AttemptHook = Callable[[int, AttemptRecord, bool], None]
FeedbackSink = Callable[[int, int, str, tuple[str, ...]], None]


def refine_page(
    gateway: ModelGateway,
    page: PageSpec,
    refs: RefSet,
    config: RunConfig,
    *,
    style: str = "",
    strict: bool = False,
    allow_fallback: bool = True,
    prompt: PromptState | None = None,
    stage: Stage = Stage.ICR,
    on_attempt: AttemptHook | None = None,
    feedback: FeedbackSink | None = None,
) -> PageResult | None:
    """Run the budgeted loop for one page.

    Returns a PageResult accepted at threshold, or the best safe fallback
    once the budget is spent. In strict (repair) mode with fallback
    disallowed, a below-threshold outcome returns None so the caller can
    keep the page it already has. Raises NoSafeCandidate when fallback is
    wanted but every attempt was unsafe.
    """
    state = prompt if prompt is not None else PromptState(base=page.initial_prompt)
    memory = PageMemory()
    attempts: list[AttemptRecord] = []
    budget = config.frame_budget or 1

    for _ in range(budget):
        image, _usage = gateway.generate_image(
            state.render(), refs.ref_ids(), stage=stage, page_index=page.index
        )
        verdict = audit_image(gateway, image, stage=stage, page_index=page.index)

        if not verdict.safe:
            bundle = VerificationBundle(0.0, (), 0.0, (), verdict)
        else:
            alpha, delta = verify_frame(
                gateway, page.text, image, page_index=page.index, stage=stage
            )
            eta, omega = verify_identity(
                gateway, page.text, image, refs.sheets, style,
                page_index=page.index, stage=stage,
            )
            bundle = VerificationBundle(alpha, delta, eta, omega, verdict)

        record = AttemptRecord(revision=state.revision, prompt=state, image=image, bundle=bundle)
        attempts.append(record)

        accepted = (
            verdict.safe
            and bundle.frame_score >= config.tau_alpha
            and bundle.identity_score >= config.tau_eta
        )
        if on_attempt is not None:
            on_attempt(page.index, record, accepted)
        if accepted:
            return PageResult(
                index=page.index,
                text=page.text,
                image=image,
                final_bundle=bundle,
                attempts=len(attempts),
                acceptance=Acceptance.THRESHOLD,
            )

        if feedback is not None:
            if verdict.safe:
                issues = (*bundle.frame_issues, *bundle.identity_issues)
                channel = "frame" if bundle.frame_issues or not bundle.identity_issues else "identity"
                feedback(page.index, state.revision, channel, issues)
            else:
                feedback(page.index, state.revision, "safety", (verdict.reason,))
        state, memory = revise_prompt(state, bundle, memory)

    if strict and not allow_fallback:
        log.info("page %d: repair budget spent without clearing thresholds", page.index)
        return None
    best = select_fallback(attempts, page_index=page.index)
    return PageResult(
        index=page.index,
        text=page.text,
        image=best.image,
        final_bundle=best.bundle,
        attempts=len(attempts),
        acceptance=Acceptance.FALLBACK,
    )
