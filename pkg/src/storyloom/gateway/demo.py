"""Self-contained deterministic backend for demos and end-to-end smoke runs.

Synthesizes plausible responses for every role from the request payload
alone: no scenario file, no network. Same inputs always produce the same
outputs (image ids are content hashes), so runs replay byte-identically.
Per-call usage comes from a fixed table calibrated so a 5-page default
run totals exactly 13,000 tokens.
"""

from __future__ import annotations

import hashlib
import re
from typing import Mapping

from .artifacts import ArtifactStore
from .roles import Role
from .scripted import BackendResponse, StepUsage

# (input_tokens, output_tokens, wall_ms) per call
USAGE_TABLE: dict[Role, tuple[int, int, int]] = {
    Role.REVIEWER_REFINER: (400, 100, 1500),
    Role.SAFETY_TEXT: (80, 20, 400),
    Role.CHARACTER_EXTRACTOR: (240, 60, 900),
    Role.SHEET_RENDERER: (120, 30, 2000),
    Role.PAGE_PLANNER: (320, 80, 1200),
    Role.IMAGE_GENERATOR: (1000, 200, 3000),
    Role.SAFETY_IMAGE: (80, 20, 400),
    Role.FRAME_DIRECTOR: (350, 100, 800),
    Role.IDENTITY_DIRECTOR: (350, 100, 800),
    Role.SEQUENCE_DIRECTOR: (320, 80, 1000),
}

def usage_for(role: Role) -> StepUsage:
    tokens_in, tokens_out, wall = USAGE_TABLE[role]
    return StepUsage(input_tokens=tokens_in, output_tokens=tokens_out, wall_ms=wall)


# Words the demo text auditor flags, and their tame replacements.
BLOCKLIST: dict[str, str] = {
    "sword": "wooden spoon",
    "blood": "red paint",
    "gun": "water balloon",
    "battle": "pillow fight",
    "knife": "butter spreader",
}

_STOPWORDS = {
    "The", "A", "An", "And", "But", "It", "When", "Then", "One", "Once",
    "They", "She", "He", "His", "Her", "Their", "In", "On", "At", "So",
}

_SPECIES = ("fox", "owl", "rabbit", "mouse", "bear")

DEMO_FRAME_SCORE = 0.92
DEMO_IDENTITY_SCORE = 0.9
DEMO_SEQUENCE_SCORE = 0.9


def _sentences(text: str) -> list[str]:
    parts = [p.strip() for p in re.split(r"(?<=[.!?])\s+", text.strip()) if p.strip()]
    return parts or [text.strip()]


def _beats(text: str, count: int) -> list[str]:
    """Fit the draft to exactly `count` narrative beats, deterministically."""
    sentences = _sentences(text)
    if len(sentences) >= count:
        beats = sentences[: count - 1] if count > 1 else []
        tail = " ".join(sentences[count - 1 :])
        beats.append(tail)
        return beats
    beats = list(sentences)
    fillers = (
        "The friends pressed on together.",
        "A small surprise waited around the corner.",
        "Everyone helped, and the plan took shape.",
        "The day grew brighter with every step.",
    )
    i = 0
    while len(beats) < count:
        beats.append(fillers[i % len(fillers)])
        i += 1
    return beats


def _named_characters(text: str) -> list[str]:
    names: list[str] = []
    for match in re.finditer(r"\b([A-Z][a-z]{2,})\b", text):
        word = match.group(1)
        if word in _STOPWORDS or word in names:
            continue
        names.append(word)
    return names


def _demo_cast(text: str) -> list[str]:
    """The two demo cast names for a story; extractor and planner share
    this so their ids always line up."""
    names = _named_characters(text)[:2]
    while len(names) < 2:
        names.append(("Pip", "Luna")[len(names)])
    return names


def _species_for(name: str) -> str:
    digest = hashlib.sha1(name.lower().encode()).digest()
    return _SPECIES[digest[0] % len(_SPECIES)]


def _scrub(text: str) -> str:
    for word, replacement in BLOCKLIST.items():
        text = re.sub(word, replacement, text, flags=re.IGNORECASE)
    return text


def _flagged(text: str) -> str | None:
    lowered = text.lower()
    for word in BLOCKLIST:
        if word in lowered:
            return word
    return None


class DemoBackend:
    """Deterministic rule-based responder for all ten roles."""

    def respond(self, role: Role, payload: Mapping, store: ArtifactStore) -> BackendResponse:
        handler = getattr(self, f"_{role.value}")
        response = handler(payload, store)
        return BackendResponse(payload=response, usage=usage_for(role))

    def _reviewer_refiner(self, payload: Mapping, store: ArtifactStore) -> dict:
        draft = payload["draft"]
        count = payload["page_count"]
        if payload.get("safety_feedback"):
            # constrained rewrite guided by the audit reason
            text = _scrub(draft)
            return {"text": text, "mode": "rewrite", "feedback": "softened flagged wording"}
        beats = _beats(draft, count)
        text = " ".join(beats)
        mode = "polish" if len(_sentences(draft)) == count else "rewrite"
        return {"text": text, "mode": mode, "feedback": f"structured into {count} beats"}

    def _safety_text(self, payload: Mapping, store: ArtifactStore) -> dict:
        word = _flagged(payload["text"])
        if word is None:
            return {"safe": True, "reason": ""}
        return {"safe": False, "reason": f"violent content detected: {word}"}

    def _character_extractor(self, payload: Mapping, store: ArtifactStore) -> dict:
        names = _demo_cast(payload["story"])
        characters = []
        for name in names:
            species = _species_for(name)
            characters.append({
                "id": name.lower(),
                "name": name,
                "descriptor": f"{species} with a bright scarf and curious eyes",
            })
        return {"characters": characters}

    def _sheet_renderer(self, payload: Mapping, store: ArtifactStore) -> dict:
        slug = re.sub(r"[^a-z0-9]+", "-", payload["descriptor"].lower()).strip("-")[:24]
        artifact = f"sheet-{slug}"
        store.put_document(artifact, {
            "source": Role.SHEET_RENDERER.value,
            "descriptor": payload["descriptor"],
            "style": payload.get("style", ""),
        })
        return {"image": artifact}

    def _page_planner(self, payload: Mapping, store: ArtifactStore) -> dict:
        count = payload["page_count"]
        style = payload.get("style", "")
        cast_ids = [name.lower() for name in _demo_cast(payload["story"])]
        beats = _beats(payload["story"], count)
        pages = []
        for beat in beats:
            prompt = f"{beat} Illustration in {style}." if style else beat
            # the demo cast travels together: both appear on every page
            pages.append({"text": beat, "prompt": prompt, "cast_ids": cast_ids})
        return {"pages": pages}

    def _image_generator(self, payload: Mapping, store: ArtifactStore) -> dict:
        prompt = payload["prompt"]
        refs = list(payload.get("refs", ()))
        digest = hashlib.sha1("|".join([prompt, *refs]).encode()).hexdigest()[:10]
        artifact = f"img-{digest}"
        entities = [
            {"id": ref.removeprefix("sheet-"), "attributes": {}}
            for ref in refs
            if ref.startswith("sheet-")
        ]
        store.put_document(artifact, {
            "source": Role.IMAGE_GENERATOR.value,
            "prompt": prompt,
            "refs": refs,
            "scene_graph": {"entities": entities, "counts": {}, "relations": [], "events": []},
        })
        return {"image": artifact}

    def _frame_director(self, payload: Mapping, store: ArtifactStore) -> dict:
        return {"score": DEMO_FRAME_SCORE, "issues": []}

    def _identity_director(self, payload: Mapping, store: ArtifactStore) -> dict:
        return {"score": DEMO_IDENTITY_SCORE, "issues": []}

    def _sequence_director(self, payload: Mapping, store: ArtifactStore) -> dict:
        return {"score": DEMO_SEQUENCE_SCORE, "critiques": [], "problem_pages": []}

    def _safety_image(self, payload: Mapping, store: ArtifactStore) -> dict:
        doc = store.document(payload["image"]) if store.exists(payload["image"]) else {}
        word = _flagged(doc.get("prompt", ""))
        if word is None:
            return {"safe": True, "reason": ""}
        return {"safe": False, "reason": f"violent content detected: {word}"}
