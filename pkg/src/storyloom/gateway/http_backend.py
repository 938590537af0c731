"""Generic HTTP backend: chat/vision for agent roles, image endpoint for
generator roles. No vendor-specific features; per-role system prompts are
versioned text assets and models are chosen via environment variables.

Wire format (JSON both ways):

    POST {base}/v1/chat
        {"model": m, "role": r, "system": template, "payload": {...}}
        -> {"payload": {...}, "usage": {"input_tokens": i, "output_tokens": o}}

    POST {base}/v1/images
        {"model": m, "role": r, "prompt": p, "refs": [ids]}
        -> {"image_b64": "...", "usage": {...}}

Environment:
    STORYLOOM_API_URL       base endpoint (required)
    STORYLOOM_API_KEY       bearer credential (optional)
    STORYLOOM_MODEL         default model name
    STORYLOOM_MODEL_<ROLE>  per-role override, e.g. STORYLOOM_MODEL_FRAME_DIRECTOR
"""

from __future__ import annotations

import base64
import hashlib
import os
import time
from functools import lru_cache
from importlib import resources
from typing import Mapping

import httpx

from ..errors import BackendError, TransientBackendError
from .artifacts import ArtifactStore
from .roles import GENERATOR_ROLES, Role
from .scripted import BackendResponse, StepUsage

ENV_URL = "STORYLOOM_API_URL"
ENV_KEY = "STORYLOOM_API_KEY"
ENV_MODEL = "STORYLOOM_MODEL"


@lru_cache(maxsize=None)
def role_template(role: Role) -> str:
    """The versioned system-prompt asset for a role."""
    ref = resources.files("storyloom.gateway") / "templates" / f"{role.value}.txt"
    return ref.read_text()


def _model_for(role: Role) -> str:
    return os.environ.get(f"{ENV_MODEL}_{role.value.upper()}") or os.environ.get(ENV_MODEL, "default")


class HttpBackend:
    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        client: httpx.Client | None = None,
        timeout: float = 60.0,
    ):
        self.base_url = (base_url or os.environ.get(ENV_URL, "")).rstrip("/")
        if not self.base_url:
            raise BackendError(f"{ENV_URL} is not configured")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_KEY)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self.client = client or httpx.Client(timeout=timeout, headers=headers)

    def respond(self, role: Role, payload: Mapping, store: ArtifactStore) -> BackendResponse:
        start = time.monotonic()
        if role in GENERATOR_ROLES:
            response, usage = self._image_call(role, payload, store)
        else:
            response, usage = self._chat_call(role, payload)
        wall_ms = int((time.monotonic() - start) * 1000)
        return BackendResponse(
            payload=response,
            usage=StepUsage(
                input_tokens=usage.get("input_tokens", 0),
                output_tokens=usage.get("output_tokens", 0),
                wall_ms=wall_ms,
            ),
        )

    def _post(self, path: str, body: dict) -> dict:
        try:
            reply = self.client.post(f"{self.base_url}{path}", json=body)
        except (httpx.TransportError, httpx.TimeoutException) as exc:
            raise TransientBackendError(str(exc)) from exc
        if reply.status_code >= 500:
            raise TransientBackendError(f"{path} returned {reply.status_code}")
        if reply.status_code >= 400:
            raise BackendError(f"{path} returned {reply.status_code}: {reply.text[:200]}")
        return reply.json()

    def _chat_call(self, role: Role, payload: Mapping) -> tuple[dict, dict]:
        body = {
            "model": _model_for(role),
            "role": role.value,
            "system": role_template(role),
            "payload": dict(payload),
        }
        data = self._post("/v1/chat", body)
        if "payload" not in data:
            raise BackendError(f"{role.value}: remote reply missing 'payload'")
        return data["payload"], data.get("usage", {})

    def _image_call(self, role: Role, payload: Mapping, store: ArtifactStore) -> tuple[dict, dict]:
        prompt = payload.get("prompt") or payload.get("descriptor", "")
        body = {
            "model": _model_for(role),
            "role": role.value,
            "prompt": prompt,
            "refs": list(payload.get("refs", ())),
        }
        data = self._post("/v1/images", body)
        if "image_b64" not in data:
            raise BackendError(f"{role.value}: remote reply missing 'image_b64'")
        raw = base64.b64decode(data["image_b64"])
        artifact_id = "img-" + hashlib.sha256(raw).hexdigest()[:12]
        store.put_bytes(artifact_id, raw)
        return {"image": artifact_id}, data.get("usage", {})
