"""storyloom: a safety-gated multi-agent pipeline that turns a story draft
into an illustrated storybook, with a constraint benchmark, cost
accounting, and a run-persisting service."""

from .domain import (
    Acceptance,
    Book,
    CastList,
    CharacterProfile,
    CharacterSheet,
    PageMemory,
    PagePlan,
    PageResult,
    PageSpec,
    Preset,
    PromptState,
    RefinedStory,
    RunConfig,
    SafetyVerdict,
    StoryDraft,
    VerificationBundle,
    compute_objective,
    validate_config,
)
from .gateway import (
    ArtifactStore,
    CostLedger,
    DemoBackend,
    ModelGateway,
    Role,
    ScriptedBackend,
    ScriptedScenario,
    Stage,
    UsageRecord,
    summarize_cost,
)

__version__ = "0.1.0"
