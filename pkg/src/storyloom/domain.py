"""Shared domain types for the pipeline plus the book-level objective.

Everything here is an immutable value object: construct, validate, share
freely across threads. Mutation happens by building a new value (see
``PromptState.extended`` and ``PageMemory.record``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError

MAX_PAGES = 100
MAX_CAST = 5

# Shared style default applied when the caller gives none.
DEFAULT_STYLE = "whimsical, soft-color children's picture-book style"


def _clean(text: str) -> str:
    return text.strip()


# ---------------------------------------------------------------------------
# Input and VAS-stage values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StoryDraft:
    """The user's raw request: draft text, optional inspiration image,
    target page count, and a global style descriptor."""

    text: str
    page_count: int
    style: str = DEFAULT_STYLE
    inspiration_image: str | None = None

    def __post_init__(self):
        if not _clean(self.text):
            raise ValueError("draft text is empty")
        if not 1 <= self.page_count <= MAX_PAGES:
            raise ValueError(f"page_count {self.page_count} outside 1..{MAX_PAGES}")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "page_count": self.page_count,
            "style": self.style,
            "inspiration_image": self.inspiration_image,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "StoryDraft":
        return cls(
            text=data["text"],
            page_count=data["page_count"],
            style=data.get("style") or DEFAULT_STYLE,
            inspiration_image=data.get("inspiration_image"),
        )


class RefineMode(str, Enum):
    POLISH = "polish"
    REWRITE = "rewrite"


@dataclass(frozen=True)
class RefinedStory:
    """The safety-cleared rewrite of the draft."""

    text: str
    mode: RefineMode
    refiner_feedback: str = ""
    safety_cleared: bool = False

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "mode": self.mode.value,
            "refiner_feedback": self.refiner_feedback,
            "safety_cleared": self.safety_cleared,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RefinedStory":
        return cls(
            text=data["text"],
            mode=RefineMode(data["mode"]),
            refiner_feedback=data.get("refiner_feedback", ""),
            safety_cleared=bool(data.get("safety_cleared")),
        )


@dataclass(frozen=True)
class CharacterProfile:
    """One recurring character: stable id plus a concise visual descriptor."""

    id: str
    name: str
    descriptor: str
    notes: str = ""

    def __post_init__(self):
        if not _clean(self.id):
            raise ValueError("character id is empty")

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "descriptor": self.descriptor, "notes": self.notes}

    @classmethod
    def from_dict(cls, data: Mapping) -> "CharacterProfile":
        return cls(
            id=data["id"],
            name=data.get("name", data["id"]),
            descriptor=data.get("descriptor", ""),
            notes=data.get("notes", ""),
        )


@dataclass(frozen=True)
class CastList:
    """Ordered cast, at most MAX_CAST members, ids unique."""

    characters: tuple[CharacterProfile, ...] = ()

    def __post_init__(self):
        ids = [c.id for c in self.characters]
        if len(ids) > MAX_CAST:
            raise ValueError(f"cast of {len(ids)} exceeds the bound of {MAX_CAST}")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate character id in cast")

    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.characters)

    def get(self, character_id: str) -> CharacterProfile:
        for c in self.characters:
            if c.id == character_id:
                return c
        raise KeyError(character_id)

    def __len__(self) -> int:
        return len(self.characters)

    def to_dict(self) -> list:
        return [c.to_dict() for c in self.characters]

    @classmethod
    def from_dict(cls, data: Sequence[Mapping]) -> "CastList":
        return cls(characters=tuple(CharacterProfile.from_dict(c) for c in data))


class SheetProvenance(str, Enum):
    RENDERED = "rendered"
    USER_PROVIDED = "user_provided"


@dataclass(frozen=True)
class CharacterSheet:
    """Canonical neutral-background reference image for one character."""

    character_id: str
    image: str
    provenance: SheetProvenance = SheetProvenance.RENDERED

    def to_dict(self) -> dict:
        return {
            "character_id": self.character_id,
            "image": self.image,
            "provenance": self.provenance.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CharacterSheet":
        return cls(
            character_id=data["character_id"],
            image=data["image"],
            provenance=SheetProvenance(data.get("provenance", "rendered")),
        )


@dataclass(frozen=True)
class PageSpec:
    """One planned page: narrative text, initial prompt, cast present."""

    index: int
    text: str
    initial_prompt: str
    cast_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "initial_prompt": self.initial_prompt,
            "cast_ids": list(self.cast_ids),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PageSpec":
        return cls(
            index=data["index"],
            text=data["text"],
            initial_prompt=data["initial_prompt"],
            cast_ids=tuple(data.get("cast_ids", ())),
        )


@dataclass(frozen=True)
class PagePlan:
    """Exactly K pages with contiguous indices 1..K."""

    pages: tuple[PageSpec, ...]

    def __post_init__(self):
        indices = [p.index for p in self.pages]
        if indices != list(range(1, len(indices) + 1)):
            raise ValueError(f"page indices not contiguous from 1: {indices}")

    def page(self, index: int) -> PageSpec:
        return self.pages[index - 1]

    def __len__(self) -> int:
        return len(self.pages)

    def to_dict(self) -> list:
        return [p.to_dict() for p in self.pages]

    @classmethod
    def from_dict(cls, data: Sequence[Mapping]) -> "PagePlan":
        return cls(pages=tuple(PageSpec.from_dict(p) for p in data))


# ---------------------------------------------------------------------------
# Prompt state and verification values
# ---------------------------------------------------------------------------

PROMPT_CRITIQUE_HEADER = "CONSTRAINTS:"
PROMPT_SAFETY_HEADER = "SAFETY:"


@dataclass(frozen=True)
class PromptState:
    """A page prompt as base text plus two append-only fragment lists.

    Rendering is deterministic: base text, then the critique section, then
    the safety section, each section a labeled header followed by one
    ``- fragment`` line per fragment, joined with single newlines. Empty
    sections are omitted. Fragments already present are never appended
    twice, so repeated critiques deduplicate to one line.
    """

    base: str
    critique_constraints: tuple[str, ...] = ()
    safety_constraints: tuple[str, ...] = ()
    revision: int = 0

    def render(self) -> str:
        parts = [self.base]
        if self.critique_constraints:
            parts.append(PROMPT_CRITIQUE_HEADER)
            parts.extend(f"- {frag}" for frag in self.critique_constraints)
        if self.safety_constraints:
            parts.append(PROMPT_SAFETY_HEADER)
            parts.extend(f"- {frag}" for frag in self.safety_constraints)
        return "\n".join(parts)

    def extended(
        self,
        critique: Iterable[str] = (),
        safety: Iterable[str] = (),
        bump_revision: bool = True,
    ) -> "PromptState":
        """Return a new state with the given fragments appended (deduplicated,
        input order preserved) and the revision counter advanced."""
        new_critique = list(self.critique_constraints)
        for frag in critique:
            if frag not in new_critique:
                new_critique.append(frag)
        new_safety = list(self.safety_constraints)
        for frag in safety:
            if frag not in new_safety:
                new_safety.append(frag)
        return PromptState(
            base=self.base,
            critique_constraints=tuple(new_critique),
            safety_constraints=tuple(new_safety),
            revision=self.revision + 1 if bump_revision else self.revision,
        )

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "critique_constraints": list(self.critique_constraints),
            "safety_constraints": list(self.safety_constraints),
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PromptState":
        return cls(
            base=data["base"],
            critique_constraints=tuple(data.get("critique_constraints", ())),
            safety_constraints=tuple(data.get("safety_constraints", ())),
            revision=data.get("revision", 0),
        )


@dataclass(frozen=True)
class SafetyVerdict:
    """Binary safety decision plus the auditor's reasoning."""

    safe: bool
    reason: str = ""

    def __post_init__(self):
        if self.safe and self.reason:
            raise ValueError("safe verdict must carry an empty reason")
        if not self.safe and not _clean(self.reason):
            raise ValueError("unsafe verdict must carry a reason")

    def to_dict(self) -> dict:
        return {"safe": self.safe, "reason": self.reason}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SafetyVerdict":
        return cls(safe=bool(data["safe"]), reason=data.get("reason", ""))


@dataclass(frozen=True)
class VerificationBundle:
    """Scores and issues from one attempt's verification pass."""

    frame_score: float
    frame_issues: tuple[str, ...]
    identity_score: float
    identity_issues: tuple[str, ...]
    image_safety: SafetyVerdict

    def __post_init__(self):
        for label, score in (("frame", self.frame_score), ("identity", self.identity_score)):
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"{label} score {score} outside [0,1]")
        if self.frame_score == 1.0 and self.frame_issues:
            raise ValueError("perfect frame score with non-empty issues")
        if self.identity_score == 1.0 and self.identity_issues:
            raise ValueError("perfect identity score with non-empty issues")

    def to_dict(self) -> dict:
        return {
            "frame_score": self.frame_score,
            "frame_issues": list(self.frame_issues),
            "identity_score": self.identity_score,
            "identity_issues": list(self.identity_issues),
            "image_safety": self.image_safety.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "VerificationBundle":
        return cls(
            frame_score=data["frame_score"],
            frame_issues=tuple(data.get("frame_issues", ())),
            identity_score=data["identity_score"],
            identity_issues=tuple(data.get("identity_issues", ())),
            image_safety=SafetyVerdict.from_dict(data["image_safety"]),
        )


class MemorySource(str, Enum):
    FRAME = "frame"
    IDENTITY = "identity"
    SAFETY = "safety"


@dataclass(frozen=True)
class MemoryEntry:
    revision: int
    issues: tuple[str, ...]
    source: MemorySource

    def to_dict(self) -> dict:
        return {"revision": self.revision, "issues": list(self.issues), "source": self.source.value}

    @classmethod
    def from_dict(cls, data: Mapping) -> "MemoryEntry":
        return cls(
            revision=data["revision"],
            issues=tuple(data.get("issues", ())),
            source=MemorySource(data["source"]),
        )


@dataclass(frozen=True)
class PageMemory:
    """Append-only log of issues from rejected attempts on one page."""

    entries: tuple[MemoryEntry, ...] = ()

    def record(self, revision: int, issues: Iterable[str], source: MemorySource) -> "PageMemory":
        entry = MemoryEntry(revision=revision, issues=tuple(issues), source=source)
        return PageMemory(entries=self.entries + (entry,))

    def critique_issues(self) -> tuple[str, ...]:
        """All frame/identity issues remembered so far, in log order,
        deduplicated. Safety entries are excluded: safety reasons live in
        the prompt's safety constraints, not in the critique pool."""
        seen: list[str] = []
        for entry in self.entries:
            if entry.source is MemorySource.SAFETY:
                continue
            for issue in entry.issues:
                if issue not in seen:
                    seen.append(issue)
        return tuple(seen)

    def to_dict(self) -> list:
        return [e.to_dict() for e in self.entries]

    @classmethod
    def from_dict(cls, data: Sequence[Mapping]) -> "PageMemory":
        return cls(entries=tuple(MemoryEntry.from_dict(e) for e in data))


class Acceptance(str, Enum):
    THRESHOLD = "threshold"
    FALLBACK = "fallback"
    REPAIRED = "repaired"


@dataclass(frozen=True)
class PageResult:
    """A finished page. Construction refuses unsafe images outright."""

    index: int
    text: str
    image: str
    final_bundle: VerificationBundle
    attempts: int
    acceptance: Acceptance

    def __post_init__(self):
        if not self.final_bundle.image_safety.safe:
            raise ValueError(f"page {self.index}: unsafe image can never become a page result")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "image": self.image,
            "final_bundle": self.final_bundle.to_dict(),
            "attempts": self.attempts,
            "acceptance": self.acceptance.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PageResult":
        return cls(
            index=data["index"],
            text=data["text"],
            image=data["image"],
            final_bundle=VerificationBundle.from_dict(data["final_bundle"]),
            attempts=data["attempts"],
            acceptance=Acceptance(data["acceptance"]),
        )


@dataclass(frozen=True)
class Book:
    """The ordered page set for one calibration round, plus its cast."""

    pages: tuple[PageResult, ...]
    round: int
    cast: CastList
    sheets: tuple[CharacterSheet, ...]
    style: str

    def __post_init__(self):
        indices = [p.index for p in self.pages]
        if indices != list(range(1, len(indices) + 1)):
            raise ValueError(f"book page indices not contiguous: {indices}")

    def page(self, index: int) -> PageResult:
        return self.pages[index - 1]

    def with_page(self, result: PageResult) -> "Book":
        pages = tuple(result if p.index == result.index else p for p in self.pages)
        return replace(self, pages=pages)

    def to_manifest(self) -> dict:
        """The book manifest document: exactly pages[], round, cast[],
        sheets[], style."""
        return {
            "pages": [p.to_dict() for p in self.pages],
            "round": self.round,
            "cast": self.cast.to_dict(),
            "sheets": [s.to_dict() for s in self.sheets],
            "style": self.style,
        }

    @classmethod
    def from_manifest(cls, data: Mapping) -> "Book":
        return cls(
            pages=tuple(PageResult.from_dict(p) for p in data["pages"]),
            round=data["round"],
            cast=CastList.from_dict(data["cast"]),
            sheets=tuple(CharacterSheet.from_dict(s) for s in data["sheets"]),
            style=data["style"],
        )


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


class Preset(str, Enum):
    LOOSE = "loose"
    DEFAULT = "default"
    STRICT = "strict"
    CUSTOM = "custom"


# preset -> (tau_alpha, tau_eta, tau_beta, frame_budget, sequence_rounds)
PRESETS: dict[Preset, tuple[float, float, float, int, int]] = {
    Preset.LOOSE: (0.6, 0.6, 0.7, 1, 1),
    Preset.DEFAULT: (0.75, 0.75, 0.8, 3, 1),
    Preset.STRICT: (0.85, 0.85, 0.9, 5, 1),
}

DEFAULT_LAMBDA = 1.0
DEFAULT_CONTEXT_WINDOW = 1


@dataclass(frozen=True)
class RunConfig:
    """Loop thresholds and budgets. Leave fields None and let
    ``validate_config`` fill them from the preset."""

    preset: Preset = Preset.DEFAULT
    tau_alpha: float | None = None
    tau_eta: float | None = None
    tau_beta: float | None = None
    frame_budget: int | None = None
    sequence_rounds: int | None = None
    lambda_coherence: float | None = None
    context_window: int | None = None
    parallel_pages: bool = False

    def to_dict(self) -> dict:
        return {
            "preset": self.preset.value,
            "tau_alpha": self.tau_alpha,
            "tau_eta": self.tau_eta,
            "tau_beta": self.tau_beta,
            "frame_budget": self.frame_budget,
            "sequence_rounds": self.sequence_rounds,
            "lambda_coherence": self.lambda_coherence,
            "context_window": self.context_window,
            "parallel_pages": self.parallel_pages,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        known = {f: data.get(f) for f in (
            "tau_alpha", "tau_eta", "tau_beta", "frame_budget",
            "sequence_rounds", "lambda_coherence", "context_window",
        )}
        return cls(
            preset=Preset(data.get("preset", "default")),
            parallel_pages=bool(data.get("parallel_pages", False)),
            **known,
        )


def validate_config(raw: RunConfig) -> RunConfig:
    """Expand preset fields and reject out-of-range values.

    For the named presets every threshold/budget is pinned; supplying a
    conflicting explicit value is a ConfigError (use preset=custom to
    override). Validation is idempotent: a validated config revalidates
    to itself.
    """
    preset = Preset(raw.preset)
    if preset is not raw.preset:
        raw = replace(raw, preset=preset)
    if raw.preset is Preset.CUSTOM:
        defaults = PRESETS[Preset.DEFAULT]
        values = {
            "tau_alpha": raw.tau_alpha if raw.tau_alpha is not None else defaults[0],
            "tau_eta": raw.tau_eta if raw.tau_eta is not None else defaults[1],
            "tau_beta": raw.tau_beta if raw.tau_beta is not None else defaults[2],
            "frame_budget": raw.frame_budget if raw.frame_budget is not None else defaults[3],
            "sequence_rounds": raw.sequence_rounds
            if raw.sequence_rounds is not None
            else defaults[4],
        }
    else:
        tau_a, tau_e, tau_b, budget, rounds = PRESETS[raw.preset]
        pinned = {
            "tau_alpha": tau_a,
            "tau_eta": tau_e,
            "tau_beta": tau_b,
            "frame_budget": budget,
            "sequence_rounds": rounds,
        }
        for name, pin in pinned.items():
            given = getattr(raw, name)
            if given is not None and given != pin:
                raise ConfigError(name, f"{given} conflicts with preset {raw.preset.value}")
        values = pinned

    for name in ("tau_alpha", "tau_eta", "tau_beta"):
        v = values[name]
        if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
            raise ConfigError(name, "out of [0,1]")
    if not isinstance(values["frame_budget"], int) or values["frame_budget"] < 1:
        raise ConfigError("frame_budget", "must be an integer >= 1")
    if not isinstance(values["sequence_rounds"], int) or values["sequence_rounds"] < 0:
        raise ConfigError("sequence_rounds", "must be an integer >= 0")

    lam = raw.lambda_coherence if raw.lambda_coherence is not None else DEFAULT_LAMBDA
    if lam < 0:
        raise ConfigError("lambda_coherence", "must be >= 0")
    window = raw.context_window if raw.context_window is not None else DEFAULT_CONTEXT_WINDOW
    if not isinstance(window, int) or window < 0:
        raise ConfigError("context_window", "must be an integer >= 0")
    if raw.parallel_pages and window != 0:
        raise ConfigError("parallel_pages", "requires context_window=0")

    return RunConfig(
        preset=raw.preset,
        lambda_coherence=lam,
        context_window=window,
        parallel_pages=raw.parallel_pages,
        **values,
    )


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def compute_objective(book: Book, beta: float, lambda_coherence: float) -> float:
    """Book-level quality: sum over pages of (frame + identity score),
    plus the weighted sequence-coherence score."""
    page_sum = sum(
        p.final_bundle.frame_score + p.final_bundle.identity_score for p in book.pages
    )
    return page_sum + lambda_coherence * beta
