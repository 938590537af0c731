"""The ten agent/generator roles and their machine-checkable I/O contracts.

Each role has an input schema and an output schema. A schema is a map of
field name -> FieldSpec; validation rejects unknown keys, missing required
keys, wrong types, and out-of-range values, always naming the offending
key. The contracts, in brief:

    reviewer_refiner     in: draft, page_count, style [, safety_feedback]
                         out: text, mode(polish|rewrite), feedback
    page_planner         in: story, page_count, style [, inspiration, note]
                         out: pages[{text, prompt [, cast_ids]}]
    character_extractor  in: story, style
                         out: characters[{id, name, descriptor [, notes]}]
    sheet_renderer       in: descriptor, style
                         out: image [, scene_graph]
    image_generator      in: prompt, refs[]
                         out: image [, scene_graph]
    frame_director       in: page_text, image
                         out: score in [0,1], issues[]
    identity_director    in: page_text, image, sheets[], style
                         out: score in [0,1], issues[]
    sequence_director    in: pages[{index, text, image}], style
                         out: score in [0,1], critiques[{text, pages [, characters]}],
                              problem_pages[]
    safety_text          in: text
                         out: safe, reason (empty iff safe)
    safety_image         in: image
                         out: safe, reason (empty iff safe)
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Mapping

from ..errors import SchemaError


class Role(str, Enum):
    REVIEWER_REFINER = "reviewer_refiner"
    PAGE_PLANNER = "page_planner"
    CHARACTER_EXTRACTOR = "character_extractor"
    SHEET_RENDERER = "sheet_renderer"
    IMAGE_GENERATOR = "image_generator"
    FRAME_DIRECTOR = "frame_director"
    IDENTITY_DIRECTOR = "identity_director"
    SEQUENCE_DIRECTOR = "sequence_director"
    SAFETY_TEXT = "safety_text"
    SAFETY_IMAGE = "safety_image"


GENERATOR_ROLES = frozenset({Role.SHEET_RENDERER, Role.IMAGE_GENERATOR})


@dataclass(frozen=True)
class FieldSpec:
    types: tuple[type, ...]
    required: bool = True
    check: Callable[[str, Any], None] | None = None


def _non_empty_str(key: str, value: Any) -> None:
    if not value.strip():
        raise SchemaError(key, "must be non-empty")


def _positive_int(key: str, value: Any) -> None:
    if isinstance(value, bool) or value < 1:
        raise SchemaError(key, "must be a positive integer")


def _unit_score(key: str, value: Any) -> None:
    if isinstance(value, bool) or not 0.0 <= value <= 1.0:
        raise SchemaError(key, f"score {value} outside [0,1]")


def _str_list(key: str, value: Any) -> None:
    if not all(isinstance(v, str) for v in value):
        raise SchemaError(key, "must be a list of strings")


def _int_list(key: str, value: Any) -> None:
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise SchemaError(key, "must be a list of integers")


def _dict_list(key: str, value: Any, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> None:
    allowed = set(required) | set(optional)
    for i, item in enumerate(value):
        if not isinstance(item, Mapping):
            raise SchemaError(key, f"item {i} is not an object")
        for req in required:
            if req not in item:
                raise SchemaError(key, f"item {i} missing key '{req}'")
        for k in item:
            if k not in allowed:
                raise SchemaError(key, f"item {i} has unknown key '{k}'")


def _planned_pages(key: str, value: Any) -> None:
    _dict_list(key, value, required=("text", "prompt"), optional=("cast_ids", "index"))


def _characters(key: str, value: Any) -> None:
    _dict_list(key, value, required=("id", "name", "descriptor"), optional=("notes",))
    ids = [item["id"] for item in value]
    if len(set(ids)) != len(ids):
        raise SchemaError(key, "duplicate character id")


def _critiques(key: str, value: Any) -> None:
    _dict_list(key, value, required=("text", "pages"), optional=("characters",))
    for i, item in enumerate(value):
        _int_list(f"{key}[{i}].pages", item["pages"])


def _book_pages(key: str, value: Any) -> None:
    _dict_list(key, value, required=("index", "text", "image"))


def _mode(key: str, value: Any) -> None:
    if value not in ("polish", "rewrite"):
        raise SchemaError(key, f"mode '{value}' not in {{polish, rewrite}}")


_S = FieldSpec((str,))
_S_NE = FieldSpec((str,), check=_non_empty_str)
_S_OPT = FieldSpec((str,), required=False)
_INT_POS = FieldSpec((int,), check=_positive_int)
_SCORE = FieldSpec((int, float), check=_unit_score)
_BOOL = FieldSpec((bool,))
_STRS = FieldSpec((list, tuple), check=_str_list)
_INTS = FieldSpec((list, tuple), check=_int_list)

INPUT_SCHEMAS: dict[Role, dict[str, FieldSpec]] = {
    Role.REVIEWER_REFINER: {
        "draft": _S_NE,
        "page_count": _INT_POS,
        "style": _S,
        "safety_feedback": _S_OPT,
    },
    Role.PAGE_PLANNER: {
        "story": _S_NE,
        "page_count": _INT_POS,
        "style": _S,
        "inspiration": _S_OPT,
        "note": _S_OPT,
    },
    Role.CHARACTER_EXTRACTOR: {"story": _S_NE, "style": _S},
    Role.SHEET_RENDERER: {"descriptor": _S_NE, "style": _S},
    Role.IMAGE_GENERATOR: {"prompt": _S_NE, "refs": _STRS},
    Role.FRAME_DIRECTOR: {"page_text": _S, "image": _S_NE},
    Role.IDENTITY_DIRECTOR: {"page_text": _S, "image": _S_NE, "sheets": _STRS, "style": _S},
    Role.SEQUENCE_DIRECTOR: {
        "pages": FieldSpec((list, tuple), check=_book_pages),
        "style": _S,
    },
    Role.SAFETY_TEXT: {"text": _S_NE},
    Role.SAFETY_IMAGE: {"image": _S_NE},
}

OUTPUT_SCHEMAS: dict[Role, dict[str, FieldSpec]] = {
    Role.REVIEWER_REFINER: {
        "text": _S_NE,
        "mode": FieldSpec((str,), check=_mode),
        "feedback": _S,
    },
    Role.PAGE_PLANNER: {"pages": FieldSpec((list, tuple), check=_planned_pages)},
    Role.CHARACTER_EXTRACTOR: {"characters": FieldSpec((list, tuple), check=_characters)},
    Role.SHEET_RENDERER: {"image": _S_NE, "scene_graph": FieldSpec((dict,), required=False)},
    Role.IMAGE_GENERATOR: {"image": _S_NE, "scene_graph": FieldSpec((dict,), required=False)},
    Role.FRAME_DIRECTOR: {"score": _SCORE, "issues": _STRS},
    Role.IDENTITY_DIRECTOR: {"score": _SCORE, "issues": _STRS},
    Role.SEQUENCE_DIRECTOR: {
        "score": _SCORE,
        "critiques": FieldSpec((list, tuple), check=_critiques),
        "problem_pages": _INTS,
    },
    Role.SAFETY_TEXT: {"safe": _BOOL, "reason": _S},
    Role.SAFETY_IMAGE: {"safe": _BOOL, "reason": _S},
}


def validate_payload(role: Role, payload: Mapping, *, direction: str) -> None:
    """Check a payload against the role's input or output schema.

    Raises SchemaError naming the first offending key. Also enforces the
    safety-verdict coupling (reason empty iff safe) on auditor outputs.
    """
    schema = (INPUT_SCHEMAS if direction == "in" else OUTPUT_SCHEMAS)[role]
    for key in payload:
        if key not in schema:
            raise SchemaError(key, f"unknown key for {role.value} {direction}put")
    for key, spec in schema.items():
        if key not in payload:
            if spec.required:
                raise SchemaError(key, f"missing from {role.value} {direction}put")
            continue
        value = payload[key]
        if not isinstance(value, spec.types) or (
            isinstance(value, bool) and bool not in spec.types
        ):
            raise SchemaError(key, f"expected {'/'.join(t.__name__ for t in spec.types)}")
        if spec.check is not None:
            spec.check(key, value)

    if direction == "out" and role in (Role.SAFETY_TEXT, Role.SAFETY_IMAGE):
        if payload["safe"] and payload["reason"].strip():
            raise SchemaError("reason", "must be empty on a safe verdict")
        if not payload["safe"] and not payload["reason"].strip():
            raise SchemaError("reason", "must be non-empty on an unsafe verdict")
