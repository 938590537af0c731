import json

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from storyloom.errors import (
    BackendError,
    RefNotFound,
    ScenarioExhausted,
    SchemaError,
    TransientBackendError,
)
from storyloom.gateway import (
    AgentRequest,
    ArtifactStore,
    ModelGateway,
    Role,
    ScenarioStep,
    ScriptedBackend,
    ScriptedScenario,
    Stage,
    StepUsage,
    UsageRecord,
    summarize_cost,
    validate_payload,
)
from storyloom.gateway.http_backend import HttpBackend, role_template


def step(role, respond, usage=None, **match):
    return ScenarioStep(role=role, respond=respond,
                        usage=usage or StepUsage(10, 5, 100), **match)


def gateway_for(*steps, strict=True, **kwargs):
    scenario = ScriptedScenario(steps=list(steps), strict=strict)
    return ModelGateway(ScriptedBackend(scenario), ArtifactStore(), **kwargs)


class TestSchemas:
    def test_missing_key_named(self):
        with pytest.raises(SchemaError) as err:
            validate_payload(Role.FRAME_DIRECTOR, {"page_text": "t"}, direction="in")
        assert err.value.key == "image"

    def test_unknown_key_rejected(self):
        with pytest.raises(SchemaError) as err:
            validate_payload(Role.SAFETY_TEXT, {"text": "x", "bogus": 1}, direction="in")
        assert err.value.key == "bogus"

    def test_out_of_range_score(self):
        with pytest.raises(SchemaError):
            validate_payload(Role.FRAME_DIRECTOR, {"score": 1.2, "issues": []}, direction="out")

    def test_duplicate_character_ids(self):
        characters = [
            {"id": "milo", "name": "Milo", "descriptor": "fox"},
            {"id": "milo", "name": "Milo Two", "descriptor": "fox"},
        ]
        with pytest.raises(SchemaError, match="duplicate character id"):
            validate_payload(Role.CHARACTER_EXTRACTOR, {"characters": characters}, direction="out")

    def test_safety_reason_coupling(self):
        with pytest.raises(SchemaError):
            validate_payload(Role.SAFETY_TEXT, {"safe": True, "reason": "odd"}, direction="out")
        with pytest.raises(SchemaError):
            validate_payload(Role.SAFETY_IMAGE, {"safe": False, "reason": ""}, direction="out")


# strategies generating schema-conforming payloads per role
_text = st.text(min_size=1, max_size=20).filter(lambda s: s.strip())
_score = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
_issues = st.lists(_text, max_size=3)

CONFORMING: dict[Role, tuple] = {
    Role.REVIEWER_REFINER: (
        st.fixed_dictionaries({"draft": _text, "page_count": st.integers(1, 20), "style": _text}),
        st.fixed_dictionaries({"text": _text, "mode": st.sampled_from(["polish", "rewrite"]), "feedback": st.text(max_size=10)}),
    ),
    Role.PAGE_PLANNER: (
        st.fixed_dictionaries({"story": _text, "page_count": st.integers(1, 20), "style": _text}),
        st.fixed_dictionaries({"pages": st.lists(
            st.fixed_dictionaries({"text": _text, "prompt": _text}), min_size=1, max_size=4)}),
    ),
    Role.CHARACTER_EXTRACTOR: (
        st.fixed_dictionaries({"story": _text, "style": _text}),
        st.integers(0, 4).map(lambda n: {"characters": [
            {"id": f"char{i}", "name": f"Char {i}", "descriptor": "desc"} for i in range(n)]}),
    ),
    Role.SHEET_RENDERER: (
        st.fixed_dictionaries({"descriptor": _text, "style": _text}),
        st.fixed_dictionaries({"image": _text}),
    ),
    Role.IMAGE_GENERATOR: (
        st.fixed_dictionaries({"prompt": _text, "refs": st.lists(_text, max_size=3)}),
        st.fixed_dictionaries({"image": _text}),
    ),
    Role.FRAME_DIRECTOR: (
        st.fixed_dictionaries({"page_text": st.text(max_size=20), "image": _text}),
        st.fixed_dictionaries({"score": _score, "issues": _issues}).filter(
            lambda p: not (p["score"] == 1.0 and p["issues"])),
    ),
    Role.IDENTITY_DIRECTOR: (
        st.fixed_dictionaries({"page_text": st.text(max_size=20), "image": _text,
                               "sheets": st.lists(_text, max_size=3), "style": _text}),
        st.fixed_dictionaries({"score": _score, "issues": _issues}),
    ),
    Role.SEQUENCE_DIRECTOR: (
        st.fixed_dictionaries({"pages": st.lists(
            st.fixed_dictionaries({"index": st.integers(1, 9), "text": _text, "image": _text}),
            min_size=1, max_size=3), "style": _text}),
        st.fixed_dictionaries({"score": _score,
                               "critiques": st.just([]),
                               "problem_pages": st.lists(st.integers(1, 9), max_size=3)}),
    ),
    Role.SAFETY_TEXT: (
        st.fixed_dictionaries({"text": _text}),
        st.one_of(st.just({"safe": True, "reason": ""}),
                  _text.map(lambda r: {"safe": False, "reason": r})),
    ),
    Role.SAFETY_IMAGE: (
        st.fixed_dictionaries({"image": _text}),
        st.one_of(st.just({"safe": True, "reason": ""}),
                  _text.map(lambda r: {"safe": False, "reason": r})),
    ),
}


@pytest.mark.parametrize("role", list(Role))
@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_contract_closure(role, data):
    """Schema-conforming payloads always validate, for every role."""
    in_strategy, out_strategy = CONFORMING[role]
    validate_payload(role, data.draw(in_strategy), direction="in")
    validate_payload(role, data.draw(out_strategy), direction="out")


class TestScriptedBackend:
    def test_strict_consumes_in_order(self):
        gw = gateway_for(
            step(Role.SAFETY_TEXT, {"safe": True, "reason": ""}),
            step(Role.SAFETY_TEXT, {"safe": False, "reason": "violent content detected"}),
        )
        first = gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "a"}), stage=Stage.VAS)
        second = gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "b"}), stage=Stage.VAS)
        assert first.payload["safe"] and not second.payload["safe"]

    def test_strict_unmatched_role_fails(self):
        gw = gateway_for(step(Role.SAFETY_TEXT, {"safe": True, "reason": ""}))
        with pytest.raises(ScenarioExhausted):
            gw.invoke(AgentRequest(Role.SAFETY_IMAGE, {"image": "x"}), stage=Stage.ICR)

    def test_empty_strict_scenario(self):
        gw = gateway_for()
        with pytest.raises(ScenarioExhausted):
            gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "x"}), stage=Stage.VAS)

    def test_loose_matches_by_payload(self):
        gw = gateway_for(
            step(Role.SAFETY_TEXT, {"safe": False, "reason": "bad"},
                 payload_equals={"text": "grim tale"}),
            step(Role.SAFETY_TEXT, {"safe": True, "reason": ""}),
            strict=False,
        )
        ok = gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "nice tale"}), stage=Stage.VAS)
        assert ok.payload["safe"]
        bad = gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "grim tale"}), stage=Stage.VAS)
        assert not bad.payload["safe"]

    def test_loose_defaults(self):
        scenario = ScriptedScenario(
            steps=[], strict=False,
            defaults={"safety_text": {"respond": {"safe": True, "reason": ""},
                                      "usage": {"input_tokens": 1, "output_tokens": 1}}},
        )
        gw = ModelGateway(ScriptedBackend(scenario), ArtifactStore())
        for _ in range(3):
            assert gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "x"}),
                             stage=Stage.VAS).payload["safe"]

    def test_scenario_roundtrip(self, tmp_path):
        scenario = ScriptedScenario(steps=[
            step(Role.IMAGE_GENERATOR, {"image": "img-1"}, payload_contains={"prompt": "fox"}),
        ])
        path = tmp_path / "scenario.json"
        scenario.save(path)
        loaded = ScriptedScenario.load(path)
        assert loaded.to_dict() == scenario.to_dict()


class TestGenerateImage:
    def test_scripted_artifact(self):
        gw = gateway_for(
            step(Role.IMAGE_GENERATOR, {"image": "img-p1-a0"},
                 payload_equals={"prompt": "page-1-v0"}),
        )
        gw.store.put_document("sheet-milo", {"descriptor": "fox"})
        image, usage = gw.generate_image("page-1-v0", ["sheet-milo"], stage=Stage.ICR, page_index=1)
        assert image == "img-p1-a0"
        assert gw.store.exists("img-p1-a0")
        assert usage.page_index == 1

    def test_unresolved_ref(self):
        gw = gateway_for(step(Role.IMAGE_GENERATOR, {"image": "img"}))
        with pytest.raises(RefNotFound, match="sheet:ghost"):
            gw.generate_image("prompt", ["sheet:ghost"], stage=Stage.ICR)

    def test_empty_prompt(self):
        gw = gateway_for()
        with pytest.raises(SchemaError) as err:
            gw.generate_image("  ", [], stage=Stage.ICR)
        assert err.value.key == "prompt"


class TestLedger:
    def test_empty_report_is_zero(self):
        report = summarize_cost(())
        assert report.grand.total_tokens == 0 and report.grand.calls == 0

    def test_additivity(self):
        records = [
            UsageRecord(Role.SAFETY_TEXT, 70, 30, 5, Stage.VAS),
            UsageRecord(Role.FRAME_DIRECTOR, 40, 10, 5, Stage.ICR, page_index=1),
        ]
        report = summarize_cost(records)
        assert report.grand.total_tokens == 150
        assert report.per_stage["vas"].total_tokens == 100
        assert report.per_page[1].total_tokens == 50

    def test_ledger_conservation(self):
        gw = gateway_for(
            step(Role.SAFETY_TEXT, {"safe": True, "reason": ""}, usage=StepUsage(100, 20, 5)),
            step(Role.SAFETY_TEXT, {"safe": True, "reason": ""}, usage=StepUsage(30, 5, 5)),
        )
        gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "a"}), stage=Stage.VAS)
        gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "b"}), stage=Stage.VAS)
        records = gw.ledger.snapshot()
        assert summarize_cost(records).grand.total_tokens == sum(r.total_tokens for r in records)


class TestTransportRetry:
    def test_retries_then_succeeds(self):
        class Flaky:
            calls = 0

            def respond(self, role, payload, store):
                self.calls += 1
                if self.calls < 3:
                    raise TransientBackendError("connection reset")
                from storyloom.gateway.scripted import BackendResponse
                return BackendResponse({"safe": True, "reason": ""}, StepUsage(1, 1, 1))

        waits = []
        gw = ModelGateway(Flaky(), ArtifactStore(), sleep=waits.append)
        response = gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "x"}), stage=Stage.VAS)
        assert response.payload["safe"]
        assert len(waits) == 2 and waits[1] > waits[0]  # exponential backoff

    def test_gives_up_after_budget(self):
        class Dead:
            def respond(self, role, payload, store):
                raise TransientBackendError("down")

        gw = ModelGateway(Dead(), ArtifactStore(), transport_retries=2, sleep=lambda s: None)
        with pytest.raises(TransientBackendError):
            gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "x"}), stage=Stage.VAS)


class TestHttpBackend:
    def _client(self, handler):
        return httpx.Client(transport=httpx.MockTransport(handler))

    def test_chat_roundtrip(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["role"] == "safety_text"
            assert "child-safety" in body["system"]
            return httpx.Response(200, json={
                "payload": {"safe": True, "reason": ""},
                "usage": {"input_tokens": 12, "output_tokens": 3},
            })

        backend = HttpBackend(base_url="http://fake", client=self._client(handler))
        gw = ModelGateway(backend, ArtifactStore())
        response = gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "hi"}), stage=Stage.VAS)
        assert response.payload["safe"] and response.usage.input_tokens == 12

    def test_image_roundtrip(self):
        import base64

        def handler(request):
            if request.url.path == "/v1/images":
                return httpx.Response(200, json={
                    "image_b64": base64.b64encode(b"png-bytes").decode(),
                    "usage": {"input_tokens": 5, "output_tokens": 1},
                })
            raise AssertionError(request.url.path)

        backend = HttpBackend(base_url="http://fake", client=self._client(handler))
        gw = ModelGateway(backend, ArtifactStore())
        image, _ = gw.generate_image("a fox", [], stage=Stage.ICR)
        assert image.startswith("img-") and gw.store.exists(image)

    def test_5xx_is_transient(self):
        attempts = []

        def handler(request):
            attempts.append(1)
            return httpx.Response(503)

        backend = HttpBackend(base_url="http://fake", client=self._client(handler))
        gw = ModelGateway(backend, ArtifactStore(), transport_retries=2, sleep=lambda s: None)
        with pytest.raises(TransientBackendError):
            gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "x"}), stage=Stage.VAS)
        assert len(attempts) == 3  # initial + 2 retries

    def test_4xx_is_permanent(self):
        def handler(request):
            return httpx.Response(400, text="bad request")

        backend = HttpBackend(base_url="http://fake", client=self._client(handler))
        gw = ModelGateway(backend, ArtifactStore(), sleep=lambda s: None)
        with pytest.raises(BackendError):
            gw.invoke(AgentRequest(Role.SAFETY_TEXT, {"text": "x"}), stage=Stage.VAS)

    def test_templates_exist_for_all_roles(self):
        for role in Role:
            text = role_template(role)
            assert text.startswith("# template-version:")
