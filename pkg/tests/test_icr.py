import random

import pytest
from hypothesis import given, strategies as st

from storyloom.domain import (
    Acceptance,
    CastList,
    CharacterProfile,
    CharacterSheet,
    MemorySource,
    PageMemory,
    PageResult,
    PageSpec,
    PromptState,
    RunConfig,
    SafetyVerdict,
    VerificationBundle,
    validate_config,
)
from storyloom.errors import NoSafeCandidate, SchemaError
from storyloom.gateway import (
    ArtifactStore,
    ModelGateway,
    Role,
    ScenarioStep,
    ScriptedBackend,
    ScriptedScenario,
    StepUsage,
)
from storyloom.icr import (
    AttemptRecord,
    RefSet,
    refine_page,
    retrieve_refs,
    revise_prompt,
    select_fallback,
    verify_frame,
    verify_identity,
)
from storyloom.safety import safety_boilerplate

from oracles import fallback_oracle

CAST = CastList((
    CharacterProfile(id="milo", name="Milo", descriptor="fox"),
    CharacterProfile(id="sage", name="Sage", descriptor="owl"),
))
SHEETS = (
    CharacterSheet(character_id="milo", image="sheet-milo"),
    CharacterSheet(character_id="sage", image="sheet-sage"),
)


def step(role, respond):
    return ScenarioStep(role=role, respond=respond, usage=StepUsage(10, 5, 50))


def gateway_for(*steps):
    gw = ModelGateway(ScriptedBackend(ScriptedScenario(steps=list(steps))), ArtifactStore())
    gw.store.put_document("sheet-milo", {})
    gw.store.put_document("sheet-sage", {})
    return gw


def page_result(index, image=None):
    bundle = VerificationBundle(0.9, (), 0.9, (), SafetyVerdict(True))
    return PageResult(index=index, text=f"page {index}", image=image or f"img-{index}",
                      final_bundle=bundle, attempts=1, acceptance=Acceptance.THRESHOLD)


def attempt(revision, alpha, eta, safe=True, reason="nudity"):
    verdict = SafetyVerdict(True) if safe else SafetyVerdict(False, reason)
    bundle = VerificationBundle(
        alpha, () if alpha == 1.0 else ("a",), eta, () if eta == 1.0 else ("b",), verdict
    )
    return AttemptRecord(revision=revision, prompt=PromptState(base="p"),
                         image=f"img-a{revision}", bundle=bundle)


class TestRetrieveRefs:
    def test_direct_construction(self):
        page = PageSpec(index=3, text="Milo again", initial_prompt="p", cast_ids=("milo",))
        accepted = [page_result(1), page_result(2)]
        refs = retrieve_refs(page, CAST, SHEETS, accepted, context_window=1)
        assert [s.character_id for s in refs.sheets] == ["milo"]
        assert refs.context == ("img-2",)
        assert refs.ref_ids() == ("sheet-milo", "img-2")

    def test_first_page_no_context(self):
        page = PageSpec(index=1, text="t", initial_prompt="p", cast_ids=("milo",))
        refs = retrieve_refs(page, CAST, SHEETS, [], context_window=1)
        assert refs.context == ()

    def test_empty(self):
        page = PageSpec(index=1, text="t", initial_prompt="p", cast_ids=())
        refs = retrieve_refs(page, CAST, SHEETS, [], context_window=0)
        assert refs.sheets == () and refs.context == ()

    def test_window_two(self):
        page = PageSpec(index=4, text="t", initial_prompt="p", cast_ids=())
        accepted = [page_result(1), page_result(2), page_result(3)]
        refs = retrieve_refs(page, CAST, SHEETS, accepted, context_window=2)
        assert refs.context == ("img-2", "img-3")


class TestDirectors:
    def test_frame_perfect(self):
        gw = gateway_for(step(Role.FRAME_DIRECTOR, {"score": 1.0, "issues": []}))
        gw.store.put_document("img", {})
        assert verify_frame(gw, "text", "img") == (1.0, ())

    def test_frame_mismatch(self):
        gw = gateway_for(step(Role.FRAME_DIRECTOR, {"score": 0.55, "issues": ["missing red scarf"]}))
        gw.store.put_document("img", {})
        alpha, issues = verify_frame(gw, "text", "img")
        assert alpha == 0.55 and issues == ("missing red scarf",)

    def test_frame_out_of_range(self):
        gw = gateway_for(step(Role.FRAME_DIRECTOR, {"score": 1.2, "issues": []}))
        gw.store.put_document("img", {})
        with pytest.raises(SchemaError):
            verify_frame(gw, "text", "img")

    def test_identity_drift(self):
        gw = gateway_for(step(Role.IDENTITY_DIRECTOR, {
            "score": 0.4, "issues": ["Milo's scarf is blue, sheet says green"],
        }))
        gw.store.put_document("img", {})
        eta, issues = verify_identity(gw, "text", "img", SHEETS, "style")
        assert eta == 0.4 and "scarf" in issues[0]

    def test_identity_vacuous_without_sheets(self):
        gw = gateway_for()  # any call would exhaust the empty scenario
        assert verify_identity(gw, "text", "img", (), "style") == (1.0, ())
        assert len(gw.ledger) == 0


class TestRevisePrompt:
    def test_unsafe_branch_appends_safety_only(self):
        prompt = PromptState(base="b")
        bundle = VerificationBundle(0.0, (), 0.0, (), SafetyVerdict(False, "violent content detected"))
        new_prompt, new_memory = revise_prompt(prompt, bundle, PageMemory())
        assert new_prompt.safety_constraints == (
            "MUST NOT depict: violent content", safety_boilerplate(),
        )
        assert new_prompt.critique_constraints == ()
        assert new_prompt.revision == 1
        assert [e.source for e in new_memory.entries] == [MemorySource.SAFETY]

    def test_safe_branch_appends_critique_only(self):
        prompt = PromptState(base="b")
        bundle = VerificationBundle(0.5, ("missing red scarf",), 0.9, (), SafetyVerdict(True))
        new_prompt, new_memory = revise_prompt(prompt, bundle, PageMemory())
        assert new_prompt.critique_constraints == ("ENSURE: missing red scarf",)
        assert new_prompt.safety_constraints == ()
        assert [e.source for e in new_memory.entries] == [MemorySource.FRAME]

    def test_memory_union_and_dedup(self):
        prompt = PromptState(base="b")
        memory = PageMemory().record(0, ("missing red scarf",), MemorySource.FRAME)
        bundle = VerificationBundle(
            0.6, ("missing red scarf",), 0.5, ("wrong species",), SafetyVerdict(True)
        )
        new_prompt, new_memory = revise_prompt(prompt, bundle, memory)
        assert new_prompt.critique_constraints == (
            "ENSURE: missing red scarf", "ENSURE: wrong species",
        )
        assert new_prompt.revision == 1
        assert len(new_memory.entries) == 2

    def test_identity_source_when_only_identity_issues(self):
        bundle = VerificationBundle(0.9, (), 0.5, ("drift",), SafetyVerdict(True))
        _, memory = revise_prompt(PromptState(base="b"), bundle, PageMemory())
        assert memory.entries[0].source is MemorySource.IDENTITY

    def test_memory_count_law_over_mixed_rejections(self):
        # every rejected attempt leaves one entry; the critique pool (the
        # non-safety entries) counts exactly the rejected safe attempts
        prompt, memory = PromptState(base="b"), PageMemory()
        safe_rejections = 0
        unsafe_rejections = 0
        for i, unsafe in enumerate([False, True, False, True, True, False]):
            if unsafe:
                bundle = VerificationBundle(0.0, (), 0.0, (), SafetyVerdict(False, "flagged"))
                unsafe_rejections += 1
            else:
                bundle = VerificationBundle(0.5, (f"issue-{i}",), 0.9, (), SafetyVerdict(True))
                safe_rejections += 1
            prompt, memory = revise_prompt(prompt, bundle, memory)
        assert len(memory.entries) == safe_rejections + unsafe_rejections
        non_safety = [e for e in memory.entries if e.source is not MemorySource.SAFETY]
        assert len(non_safety) == safe_rejections
        assert len(memory.critique_issues()) == safe_rejections


class TestSelectFallback:
    def test_example(self):
        attempts = [
            attempt(0, 0.6, 0.6),
            attempt(1, 0.9, 0.5),
            attempt(2, 0.95, 0.95, safe=False),
        ]
        assert select_fallback(attempts).revision == 1

    def test_all_unsafe(self):
        with pytest.raises(NoSafeCandidate):
            select_fallback([attempt(0, 0.9, 0.9, safe=False)], page_index=2)

    def test_tie_break_earliest(self):
        attempts = [attempt(0, 0.7, 0.7), attempt(1, 0.7, 0.7)]
        assert select_fallback(attempts).revision == 0

    @given(st.lists(
        st.tuples(
            st.floats(min_value=0, max_value=1, allow_nan=False),
            st.floats(min_value=0, max_value=1, allow_nan=False),
            st.booleans(),
        ),
        min_size=1, max_size=8,
    ))
    def test_matches_brute_force(self, rows):
        attempts = [attempt(i, a, e, safe) for i, (a, e, safe) in enumerate(rows)]
        expected = fallback_oracle([(i, a, e, safe) for i, (a, e, safe) in enumerate(rows)])
        if expected is None:
            with pytest.raises(NoSafeCandidate):
                select_fallback(attempts)
        else:
            assert select_fallback(attempts).revision == expected[0]


PAGE = PageSpec(index=1, text="Milo waves.", initial_prompt="milo waving", cast_ids=("milo",))
REFS = RefSet(sheets=(SHEETS[0],), context=())
CONFIG = validate_config(RunConfig())


def page_block(image, safe=True, reason="nudity", alpha=0.9, frame_issues=(),
               eta=0.9, identity_issues=()):
    steps = [step(Role.IMAGE_GENERATOR, {"image": image})]
    if not safe:
        steps.append(step(Role.SAFETY_IMAGE, {"safe": False, "reason": reason}))
        return steps
    steps.append(step(Role.SAFETY_IMAGE, {"safe": True, "reason": ""}))
    steps.append(step(Role.FRAME_DIRECTOR, {"score": alpha, "issues": list(frame_issues)}))
    steps.append(step(Role.IDENTITY_DIRECTOR, {"score": eta, "issues": list(identity_issues)}))
    return steps


class TestRefinePage:
    def test_first_attempt_accepted_call_counts(self):
        gw = gateway_for(*page_block("img-a0"))
        result = refine_page(gw, PAGE, REFS, CONFIG)
        assert result.acceptance is Acceptance.THRESHOLD
        assert result.attempts == 1
        roles = [r.role for r in gw.ledger.snapshot()]
        assert roles == [Role.IMAGE_GENERATOR, Role.SAFETY_IMAGE,
                         Role.FRAME_DIRECTOR, Role.IDENTITY_DIRECTOR]

    def test_frame_failure_then_pass_prompt_carries_issue(self):
        gw = gateway_for(
            *page_block("img-a0", alpha=0.5, frame_issues=["missing red scarf"]),
            *page_block("img-a1"),
        )
        prompts = []
        original = gw.generate_image

        def spy(prompt, refs, **kwargs):
            prompts.append(prompt)
            return original(prompt, refs, **kwargs)

        gw.generate_image = spy
        result = refine_page(gw, PAGE, REFS, CONFIG)
        assert result.attempts == 2
        assert "ENSURE: missing red scarf" in prompts[1]
        assert result.acceptance is Acceptance.THRESHOLD

    def test_unsafe_attempt_skips_directors(self):
        gw = gateway_for(
            *page_block("img-a0", safe=False),
            *page_block("img-a1"),
        )
        result = refine_page(gw, PAGE, REFS, CONFIG)
        roles = [r.role for r in gw.ledger.snapshot()]
        assert roles == [
            Role.IMAGE_GENERATOR, Role.SAFETY_IMAGE,          # unsafe attempt
            Role.IMAGE_GENERATOR, Role.SAFETY_IMAGE,          # safe attempt
            Role.FRAME_DIRECTOR, Role.IDENTITY_DIRECTOR,
        ]
        assert result.image == "img-a1"

    def test_budget_exhaustion_falls_back_to_best(self):
        gw = gateway_for(
            *page_block("img-a0", alpha=0.5, eta=0.5),
            *page_block("img-a1", alpha=0.7, eta=0.6),
            *page_block("img-a2", alpha=0.6, eta=0.6),
        )
        result = refine_page(gw, PAGE, REFS, CONFIG)
        assert result.acceptance is Acceptance.FALLBACK
        assert result.attempts == 3
        assert result.image == "img-a1"  # max alpha+eta among safe attempts

    def test_all_unsafe_raises(self):
        gw = gateway_for(
            *page_block("img-a0", safe=False),
            *page_block("img-a1", safe=False),
            *page_block("img-a2", safe=False),
        )
        with pytest.raises(NoSafeCandidate) as err:
            refine_page(gw, PAGE, REFS, CONFIG)
        assert err.value.page_index == 1

    def test_strict_without_fallback_returns_none(self):
        gw = gateway_for(
            *page_block("img-a0", alpha=0.5),
            *page_block("img-a1", alpha=0.5),
            *page_block("img-a2", alpha=0.5),
        )
        result = refine_page(gw, PAGE, REFS, CONFIG, strict=True, allow_fallback=False)
        assert result is None

    def test_budget_law_random(self):
        rng = random.Random(7)
        for _ in range(25):
            budget = rng.randint(1, 4)
            config = validate_config(RunConfig(
                preset="custom", frame_budget=budget, tau_alpha=0.75, tau_eta=0.75,
            ))
            steps, plan = [], []
            accepted_at = None
            for r in range(budget):
                unsafe = rng.random() < 0.3
                alpha = rng.choice([0.5, 0.8, 0.9])
                eta = rng.choice([0.5, 0.9])
                passing = not unsafe and alpha >= 0.75 and eta >= 0.75
                if passing and accepted_at is None:
                    accepted_at = r
                plan.append((unsafe, alpha, eta))
            usable = plan if accepted_at is None else plan[: accepted_at + 1]
            safe_any = any(not u for u, _, _ in usable)
            for r, (unsafe, alpha, eta) in enumerate(usable):
                steps.extend(page_block(
                    f"img-a{r}", safe=not unsafe, alpha=alpha, eta=eta,
                    frame_issues=[] if alpha >= 0.75 else ["issue"],
                    identity_issues=[] if eta >= 0.75 else ["drift"],
                ))
            gw = gateway_for(*steps)
            if not safe_any:
                with pytest.raises(NoSafeCandidate):
                    refine_page(gw, PAGE, REFS, config)
            else:
                result = refine_page(gw, PAGE, REFS, config)
                generates = [r for r in gw.ledger.snapshot() if r.role is Role.IMAGE_GENERATOR]
                audits = [r for r in gw.ledger.snapshot() if r.role is Role.SAFETY_IMAGE]
                assert len(generates) <= budget
                assert len(audits) == len(generates)  # exactly one audit per attempt
                if result.acceptance is Acceptance.THRESHOLD:
                    assert result.final_bundle.frame_score >= 0.75
                    assert result.final_bundle.identity_score >= 0.75
