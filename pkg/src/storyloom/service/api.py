"""HTTP service: create runs, watch progress, trigger repair, export books.

    POST /runs                    {draft, config?, label?}  -> {run_id}
    GET  /runs                    list of run summaries
    GET  /runs/{id}               full run view
    GET  /runs/{id}/events        SSE progress stream (resumable via
                                  Last-Event-ID or ?after=seq)
    POST /runs/{id}/repair        {pages?: [int]}
    GET  /runs/{id}/book          manifest JSON or ?format=archive (zip)
    GET  /runs/{id}/pages/{i}/attempts   attempt history (unsafe images withheld)
    GET  /runs/{id}/artifacts/{artifact} image payload (unsafe ids refused)

One writer per run: a run executing in the background rejects repair with
409. The event stream is replayable: every event is persisted with a
monotone per-run sequence number.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from pathlib import Path
from typing import Any, Callable, Iterator

from fastapi import Body, FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from ..domain import DEFAULT_STYLE, MAX_PAGES, RunConfig, StoryDraft, validate_config
from ..errors import (
    ConfigError,
    InvalidPageIndex,
    NotDone,
    RunBusy,
    RunNotFound,
    StoryloomError,
)
from ..gateway import ArtifactStore, summarize_cost
from ..gateway.core import Backend
from .pipeline import PipelineRunner, export_book, request_repair, run_view
from .store import RunStore, RunStatus, TERMINAL_STATUSES

log = logging.getLogger(__name__)

EVENT_POLL_SECONDS = 0.05


def draft_from_payload(data: dict) -> StoryDraft:
    text = data.get("text", "")
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("text", "draft text must be non-empty")
    pages = data.get("page_count")
    if not isinstance(pages, int) or isinstance(pages, bool) or not 1 <= pages <= MAX_PAGES:
        raise ConfigError("page_count", f"must be an integer in 1..{MAX_PAGES}")
    return StoryDraft(
        text=text,
        page_count=pages,
        style=data.get("style") or DEFAULT_STYLE,
        inspiration_image=data.get("inspiration_image"),
    )


class RunRegistry:
    """Tracks the single writer thread per run."""

    def __init__(self):
        self._threads: dict[str, threading.Thread] = {}
        self._lock = threading.Lock()

    def busy(self, run_id: str) -> bool:
        with self._lock:
            thread = self._threads.get(run_id)
            return thread is not None and thread.is_alive()

    def start(self, run_id: str, target: Callable[[], None]) -> None:
        with self._lock:
            existing = self._threads.get(run_id)
            if existing is not None and existing.is_alive():
                raise RunBusy(run_id)
            thread = threading.Thread(target=target, name=f"run-{run_id}", daemon=True)
            self._threads[run_id] = thread
            thread.start()

    def join(self, run_id: str, timeout: float | None = None) -> None:
        with self._lock:
            thread = self._threads.get(run_id)
        if thread is not None:
            thread.join(timeout)


def create_app(
    store_root: Path | str,
    backend_factory: Callable[[], Backend],
    ui_dir: Path | str | None = None,
) -> FastAPI:
    app = FastAPI(title="storyloom", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["*"],
    )
    store = RunStore(store_root)
    registry = RunRegistry()
    app.state.store = store
    app.state.registry = registry

    def error_response(exc: StoryloomError) -> JSONResponse:
        status = 500
        if isinstance(exc, RunNotFound):
            status = 404
        elif isinstance(exc, (RunBusy, NotDone)):
            status = 409
        elif isinstance(exc, (ConfigError, InvalidPageIndex)):
            status = 400
        body: dict[str, Any] = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError):
            body["errors"] = [{"field": exc.field, "reason": exc.reason}]
        return JSONResponse(body, status_code=status)

    @app.exception_handler(StoryloomError)
    async def handle_domain_error(request: Request, exc: StoryloomError):
        return error_response(exc)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"ok": True}

    @app.post("/runs", status_code=201)
    def create_run(body: dict = Body(...), wait: bool = Query(False)) -> dict:
        draft = draft_from_payload(body.get("draft", {}))
        config = validate_config(RunConfig.from_dict(body.get("config", {})))
        persistence = store.create(draft, config, label=body.get("label"))
        run_id = persistence.read_record().run_id
        backend = backend_factory()

        def execute() -> None:
            PipelineRunner(persistence, backend).execute()

        if wait:
            execute()
        else:
            registry.start(run_id, execute)
        return {"run_id": run_id}

    @app.get("/runs")
    def list_runs() -> list[dict]:
        summaries = []
        for record in store.iter_records():
            summaries.append({
                "run_id": record.run_id,
                "label": record.label,
                "status": record.status.value,
                "page_count": record.draft.get("page_count"),
                "created_at": record.created_at,
            })
        return summaries

    @app.get("/runs/{run_id}")
    def get_run(run_id: str) -> dict:
        return run_view(store.open(run_id))

    @app.get("/runs/{run_id}/events")
    def stream_events(run_id: str, request: Request, after: int = Query(-1)) -> StreamingResponse:
        persistence = store.open(run_id)
        last_id = request.headers.get("last-event-id")
        start_after = int(last_id) if last_id is not None else after

        def generate() -> Iterator[str]:
            cursor = start_after
            while True:
                events = persistence.events(after=cursor)
                for event in events:
                    cursor = event["seq"]
                    yield (
                        f"id: {event['seq']}\n"
                        f"event: {event['event']}\n"
                        f"data: {json.dumps(event['data'])}\n\n"
                    )
                record = persistence.read_record()
                if record.status in TERMINAL_STATUSES and not registry.busy(run_id):
                    remaining = persistence.events(after=cursor)
                    if not remaining:
                        yield "event: end\ndata: {}\n\n"
                        return
                time.sleep(EVENT_POLL_SECONDS)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/runs/{run_id}/events.json")
    def events_json(run_id: str, after: int = Query(-1)) -> list[dict]:
        """Polling variant of the event stream (same log, same seqs)."""
        return store.open(run_id).events(after=after)

    @app.post("/runs/{run_id}/repair")
    def repair(run_id: str, body: dict = Body(default={}), wait: bool = Query(False)) -> dict:
        if registry.busy(run_id):
            raise RunBusy(run_id)
        persistence = store.open(run_id)
        record = persistence.read_record()
        if record.status is not RunStatus.DONE:
            raise NotDone(run_id, record.status.value)
        pages = body.get("pages")
        if pages is not None:
            book = persistence.book()
            page_count = len(book.pages) if book else 0
            if not isinstance(pages, list) or not pages:
                raise InvalidPageIndex(0, page_count)
            for index in pages:
                if not isinstance(index, int) or not 1 <= index <= page_count:
                    raise InvalidPageIndex(index, page_count)
        backend = backend_factory()

        def execute() -> None:
            request_repair(store, run_id, backend, pages=pages)

        if wait:
            execute()
        else:
            registry.start(run_id, execute)
        return {"run_id": run_id, "status": "repairing"}

    @app.get("/runs/{run_id}/book")
    def get_book(run_id: str, format: str = Query("manifest")) -> Any:
        persistence = store.open(run_id)
        record = persistence.read_record()
        if record.status is not RunStatus.DONE:
            raise NotDone(run_id, record.status.value)
        if format == "manifest":
            book = persistence.book()
            return JSONResponse(book.to_manifest())
        if format == "archive":
            archive = export_book(store, run_id, "archive")
            return FileResponse(
                archive, media_type="application/zip", filename="book.zip"
            )
        raise ConfigError("format", "must be 'manifest' or 'archive'")

    @app.get("/runs/{run_id}/pages/{page}/attempts")
    def page_attempts(run_id: str, page: int) -> list[dict]:
        persistence = store.open(run_id)
        attempts = persistence.attempts(page)
        masked = []
        for attempt in attempts:
            safe = attempt["bundle"]["image_safety"]["safe"]
            masked.append({
                "revision": attempt["revision"],
                "accepted": attempt.get("accepted", False),
                "safe": safe,
                "safety_reason": attempt["bundle"]["image_safety"]["reason"],
                "alpha": attempt["bundle"]["frame_score"] if safe else None,
                "eta": attempt["bundle"]["identity_score"] if safe else None,
                "frame_issues": attempt["bundle"]["frame_issues"],
                "identity_issues": attempt["bundle"]["identity_issues"],
                "image": attempt["image"] if safe else None,
                "prompt": attempt["prompt"]["base"],
            })
        return masked

    @app.get("/runs/{run_id}/feedback")
    def feedback_log(run_id: str) -> dict:
        persistence = store.open(run_id)
        path = persistence.root / "feedback.log"
        lines = path.read_text().splitlines() if path.exists() else []
        return {"lines": lines}

    @app.get("/runs/{run_id}/artifacts/{artifact_id}")
    def get_artifact(run_id: str, artifact_id: str) -> FileResponse:
        persistence = store.open(run_id)
        record = persistence.read_record()
        if artifact_id in set(record.unsafe_artifacts):
            return JSONResponse(
                {"error": "UnsafeArtifact", "message": "artifact failed the safety audit"},
                status_code=403,
            )
        artifacts = ArtifactStore(persistence.root)
        if not artifacts.exists(artifact_id):
            return JSONResponse(
                {"error": "RefNotFound", "message": artifact_id}, status_code=404
            )
        path = artifacts.absolute_path(artifact_id)
        media = "application/json" if path.suffix == ".json" else None
        return FileResponse(path, media_type=media)

    @app.get("/runs/{run_id}/cost")
    def cost(run_id: str) -> dict:
        persistence = store.open(run_id)
        return summarize_cost(persistence.ledger_records()).to_dict()

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="studio")

    return app
