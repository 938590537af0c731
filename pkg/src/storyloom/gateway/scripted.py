"""Deterministic scripted backend: replays canned responses from a scenario.

A scenario is an ordered list of steps, each with a match clause (role,
optionally payload predicates), a response payload, and the usage to
charge. In strict mode calls must consume steps in order and an unmatched
call is an error; in loose mode the first unconsumed matching step wins,
with optional per-role defaults as a last resort.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..errors import ScenarioExhausted
from .artifacts import ArtifactStore
from .roles import GENERATOR_ROLES, Role

SCENARIO_VERSION = 1


@dataclass(frozen=True)
class StepUsage:
    input_tokens: int = 0
    output_tokens: int = 0
    wall_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_ms": self.wall_ms,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "StepUsage":
        return cls(
            input_tokens=data.get("input_tokens", 0),
            output_tokens=data.get("output_tokens", 0),
            wall_ms=data.get("wall_ms", 0),
        )


@dataclass(frozen=True)
class ScenarioStep:
    role: Role
    respond: Mapping[str, Any]
    usage: StepUsage = StepUsage()
    payload_equals: Mapping[str, Any] | None = None
    payload_contains: Mapping[str, str] | None = None

    def matches(self, role: Role, payload: Mapping) -> bool:
        if role is not self.role:
            return False
        if self.payload_equals is not None:
            for key, expected in self.payload_equals.items():
                if key not in payload or payload[key] != expected:
                    return False
        if self.payload_contains is not None:
            for key, fragment in self.payload_contains.items():
                value = payload.get(key)
                if not isinstance(value, str) or fragment not in value:
                    return False
        return True

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {
            "match": {"role": self.role.value},
            "respond": dict(self.respond),
            "usage": self.usage.to_dict(),
        }
        if self.payload_equals is not None:
            doc["match"]["payload_equals"] = dict(self.payload_equals)
        if self.payload_contains is not None:
            doc["match"]["payload_contains"] = dict(self.payload_contains)
        return doc

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioStep":
        match = data["match"]
        return cls(
            role=Role(match["role"]),
            respond=data["respond"],
            usage=StepUsage.from_dict(data.get("usage", {})),
            payload_equals=match.get("payload_equals"),
            payload_contains=match.get("payload_contains"),
        )


@dataclass
class ScriptedScenario:
    steps: list[ScenarioStep] = field(default_factory=list)
    strict: bool = True
    defaults: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": SCENARIO_VERSION,
            "strict": self.strict,
            "steps": [s.to_dict() for s in self.steps],
            "defaults": self.defaults,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScriptedScenario":
        return cls(
            steps=[ScenarioStep.from_dict(s) for s in data.get("steps", ())],
            strict=bool(data.get("strict", True)),
            defaults=dict(data.get("defaults", {})),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: Path | str) -> "ScriptedScenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class BackendResponse:
    payload: dict
    usage: StepUsage
    scenario_step: int | None = None


class ScriptedBackend:
    """Serves a ScriptedScenario. Not safe for concurrent callers in strict
    mode: concurrent calls against a strict scenario are a caller error."""

    def __init__(self, scenario: ScriptedScenario):
        self.scenario = scenario
        self._consumed: list[bool] = [False] * len(scenario.steps)
        self._cursor = 0

    @property
    def consumed_indices(self) -> tuple[int, ...]:
        return tuple(i for i, used in enumerate(self._consumed) if used)

    def restore(self, consumed: Sequence[int]) -> None:
        """Mark steps already consumed by a previous (resumed) run."""
        for idx in consumed:
            self._consumed[idx] = True
        while self._cursor < len(self._consumed) and self._consumed[self._cursor]:
            self._cursor += 1

    def remaining(self) -> int:
        return sum(1 for used in self._consumed if not used)

    def respond(self, role: Role, payload: Mapping, store: ArtifactStore) -> BackendResponse:
        index = self._match(role, payload)
        if index is None:
            default = self.scenario.defaults.get(role.value)
            if default is None:
                raise ScenarioExhausted(
                    f"no scripted step matches a {role.value} call "
                    f"({self.remaining()} steps remaining)"
                )
            response = copy.deepcopy(default.get("respond", {}))
            usage = StepUsage.from_dict(default.get("usage", {}))
            step_index = None
        else:
            step = self.scenario.steps[index]
            self._consumed[index] = True
            while self._cursor < len(self._consumed) and self._consumed[self._cursor]:
                self._cursor += 1
            response = copy.deepcopy(dict(step.respond))
            usage = step.usage
            step_index = index

        if role in GENERATOR_ROLES and "image" in response:
            self._register_image(role, payload, response, store)
        return BackendResponse(payload=response, usage=usage, scenario_step=step_index)

    def _match(self, role: Role, payload: Mapping) -> int | None:
        if self.scenario.strict:
            if self._cursor >= len(self.scenario.steps):
                raise ScenarioExhausted(
                    f"scenario exhausted: unexpected {role.value} call"
                )
            step = self.scenario.steps[self._cursor]
            if not step.matches(role, payload):
                raise ScenarioExhausted(
                    f"step {self._cursor} expects {step.role.value}, "
                    f"got {role.value} with payload keys {sorted(payload)}"
                )
            return self._cursor
        for i, step in enumerate(self.scenario.steps):
            if not self._consumed[i] and step.matches(role, payload):
                return i
        return None

    @staticmethod
    def _register_image(role: Role, payload: Mapping, response: Mapping, store: ArtifactStore) -> None:
        doc: dict[str, Any] = {"source": role.value}
        if role is Role.IMAGE_GENERATOR:
            doc["prompt"] = payload.get("prompt", "")
            doc["refs"] = list(payload.get("refs", ()))
        else:
            doc["descriptor"] = payload.get("descriptor", "")
        if "scene_graph" in response and response["scene_graph"] is not None:
            doc["scene_graph"] = response["scene_graph"]
        store.put_document(response["image"], doc)
