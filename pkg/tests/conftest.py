from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from storyloom import StoryDraft
from storyloom.gateway import ArtifactStore, ModelGateway, ScriptedBackend
from storyloom.scenario_builder import ScenarioBuilder

CANONICAL_DRAFT = "Milo the fox finds a lantern. Sage the owl helps him home."


@pytest.fixture
def draft() -> StoryDraft:
    return StoryDraft(text=CANONICAL_DRAFT, page_count=5)


@pytest.fixture
def builder() -> ScenarioBuilder:
    return ScenarioBuilder(draft_text=CANONICAL_DRAFT, page_count=5)


def scripted_gateway(scenario, **kwargs) -> ModelGateway:
    return ModelGateway(ScriptedBackend(scenario), ArtifactStore(), **kwargs)
