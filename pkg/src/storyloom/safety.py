"""Text and image safety auditing, critique-guided text sanitization, and
the mapping from image-safety reasons to negative prompt constraints.

Safety *decisions* are delegated to the auditor roles behind the gateway;
this module owns the gating loop and the reason-to-constraint rewrite, so
the actual child-safety policy stays swappable with the backend.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .domain import SafetyVerdict
from .errors import SafetyExhausted, SchemaError
from .gateway import AgentRequest, ModelGateway, Role, Stage

DEFAULT_SANITIZE_ROUNDS = 3

# Trailing auditor verdict words stripped when a reason becomes a prompt
# constraint: "violent content detected" -> "violent content".
REASON_SUFFIXES = (
    " detected",
    " found",
    " identified",
    " present",
    " observed",
)

NEGATIVE_PREFIX = "MUST NOT depict: "


@lru_cache(maxsize=1)
def safety_boilerplate() -> str:
    """The fixed child-safety constraint appended once per page loop.
    Stored as a versioned asset so tests can pin it byte-exactly."""
    ref = resources.files("storyloom") / "assets" / "safety_boilerplate.txt"
    return ref.read_text().strip()


def normalize_reason(reason: str) -> str:
    """Strip trailing verdict words and punctuation from an audit reason.
    Unknown phrasings pass through verbatim."""
    text = reason.strip().rstrip(".").strip()
    lowered = text.lower()
    for suffix in REASON_SUFFIXES:
        if lowered.endswith(suffix):
            text = text[: len(text) - len(suffix)].rstrip()
            break
    return text


def safety_negatives(reason: str) -> tuple[str, ...]:
    """Turn an image-safety reason into negative prompt fragments: one
    targeted MUST NOT line plus the fixed boilerplate. Pure."""
    if not reason.strip():
        raise ValueError("safety reason is empty")
    return (NEGATIVE_PREFIX + normalize_reason(reason), safety_boilerplate())


def audit_text(
    gateway: ModelGateway,
    text: str,
    *,
    stage: Stage = Stage.VAS,
    page_index: int | None = None,
) -> SafetyVerdict:
    if not text.strip():
        raise SchemaError("text", "must be non-empty")
    response = gateway.invoke(
        AgentRequest(Role.SAFETY_TEXT, {"text": text}),
        stage=stage,
        page_index=page_index,
    )
    return SafetyVerdict.from_dict(response.payload)


def audit_image(
    gateway: ModelGateway,
    image: str,
    *,
    stage: Stage = Stage.ICR,
    page_index: int | None = None,
) -> SafetyVerdict:
    gateway.store.require(image)
    response = gateway.invoke(
        AgentRequest(Role.SAFETY_IMAGE, {"image": image}),
        stage=stage,
        page_index=page_index,
    )
    return SafetyVerdict.from_dict(response.payload)


def sanitize_text(
    gateway: ModelGateway,
    text: str,
    *,
    page_count: int,
    style: str,
    max_rounds: int = DEFAULT_SANITIZE_ROUNDS,
    stage: Stage = Stage.VAS,
) -> str:
    """Audit the text; while unsafe, feed the audit reason back into the
    refiner as a rewrite instruction and audit again.

    Round n makes one audit (plus one rewrite for n > 1), so a text passing
    immediately costs one audit and zero rewrites. Raises SafetyExhausted
    with the last reason when max_rounds audits all fail.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    current = text
    last_reason = ""
    for round_no in range(1, max_rounds + 1):
        if round_no > 1:
            rewrite = gateway.invoke(
                AgentRequest(Role.REVIEWER_REFINER, {
                    "draft": current,
                    "page_count": page_count,
                    "style": style,
                    "safety_feedback": last_reason,
                }),
                stage=stage,
            )
            current = rewrite.payload["text"]
        verdict = audit_text(gateway, current, stage=stage)
        if verdict.safe:
            return current
        last_reason = verdict.reason
    raise SafetyExhausted(last_reason, max_rounds)
