"""The model gateway: single choke point for every agent and generator call.

Validates payloads against the role contracts on the way in and out,
charges the cost ledger, notifies an optional observer (the run recorder),
and retries transient transport failures with exponential backoff. The
transport retry budget is separate from the page-loop revision budget.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

from ..errors import SchemaError, TransientBackendError
from .artifacts import ArtifactStore
from .ledger import CostLedger, Stage, UsageRecord
from .roles import Role, validate_payload
from .scripted import BackendResponse

log = logging.getLogger(__name__)

DEFAULT_TRANSPORT_RETRIES = 3


class Backend(Protocol):
    def respond(self, role: Role, payload: Mapping, store: ArtifactStore) -> BackendResponse: ...


@dataclass(frozen=True)
class AgentRequest:
    role: Role
    payload: Mapping


@dataclass(frozen=True)
class AgentResponse:
    payload: dict
    usage: UsageRecord


@dataclass(frozen=True)
class CallRecord:
    """One completed gateway call, as seen by the run recorder."""

    role: Role
    stage: Stage
    page_index: int | None
    request: dict
    response: dict
    usage: UsageRecord
    scenario_step: int | None


class ModelGateway:
    def __init__(
        self,
        backend: Backend,
        store: ArtifactStore | None = None,
        ledger: CostLedger | None = None,
        observer: Callable[[CallRecord], None] | None = None,
        transport_retries: int = DEFAULT_TRANSPORT_RETRIES,
        backoff_base: float = 0.05,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.store = store if store is not None else ArtifactStore()
        self.ledger = ledger if ledger is not None else CostLedger()
        self.observer = observer
        self.transport_retries = transport_retries
        self.backoff_base = backoff_base
        self._sleep = sleep

    def invoke(
        self,
        req: AgentRequest,
        *,
        stage: Stage,
        page_index: int | None = None,
    ) -> AgentResponse:
        validate_payload(req.role, req.payload, direction="in")
        raw = self._call_with_retry(req.role, req.payload)
        validate_payload(req.role, raw.payload, direction="out")
        usage = UsageRecord(
            role=req.role,
            input_tokens=raw.usage.input_tokens,
            output_tokens=raw.usage.output_tokens,
            wall_ms=raw.usage.wall_ms,
            stage=stage,
            page_index=page_index,
        )
        self.ledger.append(usage)
        if self.observer is not None:
            self.observer(CallRecord(
                role=req.role,
                stage=stage,
                page_index=page_index,
                request=dict(req.payload),
                response=dict(raw.payload),
                usage=usage,
                scenario_step=raw.scenario_step,
            ))
        return AgentResponse(payload=dict(raw.payload), usage=usage)

    def generate_image(
        self,
        prompt: str,
        refs: Sequence[str],
        *,
        stage: Stage,
        page_index: int | None = None,
    ) -> tuple[str, UsageRecord]:
        """Produce an illustration conditioned on the prompt and the given
        reference artifacts. Every ref must already resolve in the store."""
        if not prompt.strip():
            raise SchemaError("prompt", "must be non-empty")
        for ref in refs:
            self.store.require(ref)
        response = self.invoke(
            AgentRequest(Role.IMAGE_GENERATOR, {"prompt": prompt, "refs": list(refs)}),
            stage=stage,
            page_index=page_index,
        )
        return response.payload["image"], response.usage

    def render_sheet(
        self,
        descriptor: str,
        style: str,
        *,
        stage: Stage = Stage.VAS,
    ) -> tuple[str, UsageRecord]:
        response = self.invoke(
            AgentRequest(Role.SHEET_RENDERER, {"descriptor": descriptor, "style": style}),
            stage=stage,
        )
        return response.payload["image"], response.usage

    def _call_with_retry(self, role: Role, payload: Mapping) -> BackendResponse:
        attempt = 0
        while True:
            try:
                return self.backend.respond(role, payload, self.store)
            except TransientBackendError as exc:
                if attempt >= self.transport_retries:
                    raise
                delay = self.backoff_base * (2 ** attempt)
                log.warning(
                    "transient backend failure on %s (attempt %d/%d), retrying in %.2fs: %s",
                    role.value, attempt + 1, self.transport_retries, delay, exc,
                )
                self._sleep(delay)
                attempt += 1
