"""Model gateway: role contracts, backends, artifact store, cost ledger."""

from .artifacts import ArtifactStore
from .core import AgentRequest, AgentResponse, Backend, CallRecord, ModelGateway
from .demo import DemoBackend, USAGE_TABLE
from .ledger import CostLedger, CostReport, Stage, Totals, UsageRecord, summarize_cost
from .roles import INPUT_SCHEMAS, OUTPUT_SCHEMAS, Role, validate_payload
from .scripted import (
    BackendResponse,
    ScenarioStep,
    ScriptedBackend,
    ScriptedScenario,
    StepUsage,
)

__all__ = [
    "AgentRequest",
    "AgentResponse",
    "ArtifactStore",
    "Backend",
    "BackendResponse",
    "CallRecord",
    "CostLedger",
    "CostReport",
    "DemoBackend",
    "INPUT_SCHEMAS",
    "ModelGateway",
    "OUTPUT_SCHEMAS",
    "Role",
    "ScenarioStep",
    "ScriptedBackend",
    "ScriptedScenario",
    "Stage",
    "StepUsage",
    "Totals",
    "UsageRecord",
    "USAGE_TABLE",
    "summarize_cost",
    "validate_payload",
]
