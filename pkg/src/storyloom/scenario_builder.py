"""Builds strict scripted scenarios that mirror the engine's exact call
order, with injection points for failures.

The builder emulates the page loop's control flow step for step, so the
resulting scenario is consumed completely by a run: every injected frame
failure, unsafe audit, wrong-length plan, or flagged sequence audit lands
on exactly the call the engine makes next. Per-call usage comes from the
same table as the demo backend, so canonical costs hold (a 5-page default
run totals 13,000 tokens).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .domain import DEFAULT_STYLE, RunConfig, validate_config
from .gateway import Role, ScenarioStep, ScriptedScenario
from .gateway.demo import usage_for

DEFAULT_CAST: tuple[tuple[str, str, str], ...] = (
    ("milo", "Milo", "fox with a green scarf and a small satchel"),
    ("sage", "Sage", "owl with round glasses and a star-patterned vest"),
)

PASSING_FRAME = (0.92, ())
PASSING_IDENTITY = (0.9, ())


@dataclass(frozen=True)
class AttemptScript:
    """One scripted generation attempt for a page."""

    unsafe_reason: str | None = None
    frame: tuple[float, Sequence[str]] = PASSING_FRAME
    identity: tuple[float, Sequence[str]] = PASSING_IDENTITY
    scene_graph: Mapping | None = None


@dataclass
class ScenarioBuilder:
    draft_text: str
    page_count: int
    style: str = DEFAULT_STYLE
    cast: Sequence[tuple[str, str, str]] = DEFAULT_CAST
    config: RunConfig = field(default_factory=RunConfig)
    inspiration: bool = False
    refined_text: str | None = None
    # text-safety loop: verdict reasons for successive audits (None = safe),
    # and the rewrite text the refiner answers with after each unsafe one
    text_audit_reasons: Sequence[str | None] = (None,)
    rewrite_texts: Sequence[str] = ()
    # planner page counts returned before the correct plan (wrong-count injection)
    planner_wrong_counts: Sequence[int] = ()
    # page index -> attempt scripts (default: one passing attempt)
    attempts: Mapping[int, Sequence[AttemptScript]] = field(default_factory=dict)
    # sequence audits in order: (beta, critiques, problem_pages);
    # critiques are (text, pages, characters)
    sequence_audits: Sequence[tuple[float, Sequence[tuple[str, Sequence[int], Sequence[str]]], Sequence[int]]] = ((0.9, (), ()),)
    # (audit_index, page) -> repair attempt scripts
    repair_attempts: Mapping[tuple[int, int], Sequence[AttemptScript]] = field(default_factory=dict)

    def __post_init__(self):
        self.config = validate_config(self.config)

    # -- public -----------------------------------------------------------

    def build(self) -> ScriptedScenario:
        steps: list[ScenarioStep] = []
        self._vas_steps(steps)
        for index in range(1, self.page_count + 1):
            scripts = list(self.attempts.get(index, (AttemptScript(),)))
            self._page_steps(steps, index, scripts, image_prefix=f"img-p{index}")
        self._tcc_steps(steps)
        return ScriptedScenario(steps=steps, strict=True)

    def expected_roles(self) -> list[str]:
        """The role of every call the engine will make, in order."""
        return [step.role.value for step in self.build().steps]

    def audit_scenario(
        self,
        beta: float = 0.95,
        critiques: Sequence[tuple[str, Sequence[int], Sequence[str]]] = (),
        problem_pages: Sequence[int] = (),
    ) -> ScriptedScenario:
        """A standalone sequence-audit scenario (for repair requests on a
        consistent book)."""
        steps: list[ScenarioStep] = []
        steps.append(self._step(Role.SEQUENCE_DIRECTOR, {
            "score": beta,
            "critiques": [
                {"text": text, "pages": list(pages), "characters": list(chars)}
                for text, pages, chars in critiques
            ],
            "problem_pages": sorted(problem_pages),
        }))
        return ScriptedScenario(steps=steps, strict=True)

    def user_repair_scenario(
        self,
        pages: Sequence[int],
        beta: float = 0.95,
        attempts: Mapping[int, Sequence[AttemptScript]] | None = None,
    ) -> ScriptedScenario:
        """One human-triggered repair round: the audit, then a repair block
        per selected page (image ids carry a -u revision prefix so they
        never collide with the original page artifacts)."""
        scenario = self.audit_scenario(beta=beta)
        for page in sorted(pages):
            scripts = list((attempts or {}).get(page, (AttemptScript(),)))
            self._page_steps(
                scenario.steps, page, scripts, image_prefix=f"img-p{page}-u0"
            )
        return scenario

    # -- internals -----------------------------------------------------------

    def _step(self, role: Role, respond: Mapping, **match) -> ScenarioStep:
        return ScenarioStep(role=role, respond=dict(respond), usage=usage_for(role), **match)

    def _refined(self) -> str:
        return self.refined_text if self.refined_text is not None else self.draft_text

    def _vas_steps(self, steps: list[ScenarioStep]) -> None:
        current = self._refined()
        steps.append(self._step(Role.REVIEWER_REFINER, {
            "text": current, "mode": "rewrite", "feedback": "restructured",
        }))
        rewrites = list(self.rewrite_texts)
        for round_no, reason in enumerate(self.text_audit_reasons):
            if round_no > 0:
                current = rewrites.pop(0) if rewrites else f"{current} (rewritten)"
                steps.append(self._step(Role.REVIEWER_REFINER, {
                    "text": current, "mode": "rewrite", "feedback": "safety rewrite",
                }))
            if reason is None:
                steps.append(self._step(Role.SAFETY_TEXT, {"safe": True, "reason": ""}))
                break
            steps.append(self._step(Role.SAFETY_TEXT, {"safe": False, "reason": reason}))

        steps.append(self._step(Role.CHARACTER_EXTRACTOR, {
            "characters": [
                {"id": cid, "name": name, "descriptor": descriptor}
                for cid, name, descriptor in self.cast
            ],
        }))
        for position, (cid, _name, _descriptor) in enumerate(self.cast):
            if position == 0 and self.inspiration:
                continue
            steps.append(self._step(Role.SHEET_RENDERER, {"image": f"sheet-{cid}"}))

        cast_ids = [cid for cid, _, _ in self.cast]
        for wrong in self.planner_wrong_counts:
            steps.append(self._step(Role.PAGE_PLANNER, {
                "pages": self._planned_pages(wrong, cast_ids),
            }))
        steps.append(self._step(Role.PAGE_PLANNER, {
            "pages": self._planned_pages(self.page_count, cast_ids),
        }))

    def _planned_pages(self, count: int, cast_ids: list[str]) -> list[dict]:
        return [
            {
                "text": f"Page {i} of the tale.",
                "prompt": f"page-{i} scene, {self.style}",
                "cast_ids": cast_ids,
            }
            for i in range(1, count + 1)
        ]

    def _page_steps(
        self,
        steps: list[ScenarioStep],
        index: int,
        scripts: Sequence[AttemptScript],
        image_prefix: str,
        budget: int | None = None,
    ) -> None:
        """Emit the exact call sequence the page loop makes for these
        attempts, enforcing that the script length matches what the loop
        will actually consume."""
        budget = budget if budget is not None else self.config.frame_budget
        has_identity = bool(self.cast)
        if len(scripts) > budget:
            raise ValueError(
                f"page {index}: {len(scripts)} attempts scripted, budget is {budget}"
            )
        for revision, script in enumerate(scripts):
            image_id = f"{image_prefix}-a{revision}"
            respond: dict = {"image": image_id}
            if script.scene_graph is not None:
                respond["scene_graph"] = dict(script.scene_graph)
            steps.append(self._step(Role.IMAGE_GENERATOR, respond))
            if script.unsafe_reason is not None:
                steps.append(self._step(Role.SAFETY_IMAGE, {
                    "safe": False, "reason": script.unsafe_reason,
                }))
                continue
            steps.append(self._step(Role.SAFETY_IMAGE, {"safe": True, "reason": ""}))
            alpha, delta = script.frame
            steps.append(self._step(Role.FRAME_DIRECTOR, {
                "score": alpha, "issues": list(delta),
            }))
            if has_identity:
                eta, omega = script.identity
                steps.append(self._step(Role.IDENTITY_DIRECTOR, {
                    "score": eta, "issues": list(omega),
                }))
            else:
                eta = 1.0
            accepted = alpha >= self.config.tau_alpha and eta >= self.config.tau_eta
            if accepted:
                if revision != len(scripts) - 1:
                    raise ValueError(
                        f"page {index}: attempt {revision} passes thresholds but "
                        f"{len(scripts) - 1 - revision} more attempts are scripted"
                    )
                return
        # loop ends unaccepted: engine falls back iff the budget is spent
        if len(scripts) != budget:
            raise ValueError(
                f"page {index}: no attempt passes and only {len(scripts)} of "
                f"{budget} budgeted attempts are scripted"
            )

    def _tcc_steps(self, steps: list[ScenarioStep]) -> None:
        limit = self.config.sequence_rounds
        if limit == 0:
            return
        audits = list(self.sequence_audits)
        for audit_index, (beta, critiques, problem_pages) in enumerate(audits):
            steps.append(self._step(Role.SEQUENCE_DIRECTOR, {
                "score": beta,
                "critiques": [
                    {"text": text, "pages": list(pages), "characters": list(chars)}
                    for text, pages, chars in critiques
                ],
                "problem_pages": sorted(problem_pages),
            }))
            converged = beta >= self.config.tau_beta or not problem_pages
            if converged or audit_index == limit:
                return
            for page in sorted(problem_pages):
                scripts = list(self.repair_attempts.get(
                    (audit_index, page), (AttemptScript(),)
                ))
                self._page_steps(
                    steps, page, scripts, image_prefix=f"img-p{page}-r{audit_index}"
                )


def demo_scenario(
    draft_text: str = "Milo the fox finds a lantern. Sage the owl helps him home.",
    page_count: int = 5,
    style: str = DEFAULT_STYLE,
    config: RunConfig | None = None,
) -> ScriptedScenario:
    """The canonical happy-path scenario for a K-page run."""
    builder = ScenarioBuilder(
        draft_text=draft_text,
        page_count=page_count,
        style=style,
        config=config if config is not None else RunConfig(),
    )
    return builder.build()
