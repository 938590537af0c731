"""End-to-end run execution with persistence, progress events, and resume.

Every gateway call a run completes is committed to its transcript. Resume
re-executes the pipeline with a replay wrapper that serves the committed
prefix straight from the transcript: those calls never reach the real
backend again, the in-memory state is reconstructed deterministically, and
execution goes live exactly where the previous process stopped.
"""

from __future__ import annotations

import json
import logging
import shutil
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from ..domain import (
    Acceptance,
    Book,
    PagePlan,
    PageResult,
    RunConfig,
    StoryDraft,
    validate_config,
)
from ..errors import (
    BackendError,
    InvalidPageIndex,
    NoSafeCandidate,
    NotDone,
    SafetyExhausted,
    StoryloomError,
)
from ..gateway import ArtifactStore, CostLedger, ModelGateway, Stage, summarize_cost
from ..gateway.core import Backend, CallRecord
from ..gateway.roles import Role
from ..gateway.scripted import BackendResponse, ScriptedBackend, StepUsage
from ..icr import AttemptRecord, refine_page, retrieve_refs
from ..tcc import SequenceAudit, _repair_refs, audit_sequence, calibrate, plan_repairs
from ..vas import VasOutput, extract_characters, plan_pages, refine_draft, render_sheets
from .store import (
    BOOK_FILE,
    RunPersistence,
    RunRecord,
    RunStatus,
    RunStore,
)

log = logging.getLogger(__name__)

INSPIRATION_ARTIFACT = "inspiration"


class ReplayPrefixBackend:
    """Serves the committed transcript prefix, then delegates live calls."""

    def __init__(self, inner: Backend, recorded: Sequence[Mapping]):
        self._inner = inner
        self._recorded = list(recorded)
        self._pos = 0

    @property
    def replaying(self) -> bool:
        return self._pos < len(self._recorded)

    def respond(self, role: Role, payload: Mapping, store: ArtifactStore) -> BackendResponse:
        if self._pos < len(self._recorded):
            line = self._recorded[self._pos]
            self._pos += 1
            if line["role"] != role.value:
                raise BackendError(
                    f"resume diverged: transcript has {line['role']} at call "
                    f"{self._pos - 1}, pipeline asked for {role.value}"
                )
            return BackendResponse(
                payload=json.loads(json.dumps(line["response"])),
                usage=StepUsage.from_dict(line["usage"]),
                scenario_step=line.get("step"),
            )
        return self._inner.respond(role, payload, store)


class _Recorder:
    """Gateway observer: commits live calls, counts replayed ones."""

    def __init__(self, persistence: RunPersistence, skip: int):
        self._persistence = persistence
        self._skip = skip
        self._seen = 0

    def __call__(self, call: CallRecord) -> None:
        if self._seen < self._skip:
            self._seen += 1
            return
        self._seen += 1
        self._persistence.commit_call(call)


class PipelineRunner:
    """Executes (or resumes) one run end to end.

    With continuation=True the runner appends new calls to an existing
    finished run (the repair path): no transcript replay, the backend is
    used as-is, and the in-memory ledger starts from the persisted one.
    """

    def __init__(self, persistence: RunPersistence, backend: Backend,
                 continuation: bool = False):
        self.p = persistence
        self.record = persistence.read_record()
        self.draft = StoryDraft.from_dict(self.record.draft)
        self.config = validate_config(RunConfig.from_dict(self.record.config))
        self.artifacts = ArtifactStore(persistence.root)

        if continuation:
            self.backend = backend
            self.recorder = _Recorder(persistence, skip=0)
            ledger = CostLedger(persistence.ledger_records())
        else:
            recorded = persistence.transcript()
            if isinstance(backend, ScriptedBackend):
                backend.restore(persistence.consumed_scenario_steps())
            self.backend = (
                ReplayPrefixBackend(backend, recorded) if recorded else backend
            )
            self.recorder = _Recorder(persistence, skip=len(recorded))
            ledger = CostLedger()
        self.gateway = ModelGateway(
            self.backend, self.artifacts, ledger, observer=self.recorder
        )
        self.unsafe: set[str] = set(self.record.unsafe_artifacts)

    # -- bookkeeping ---------------------------------------------------------

    def _save_record(self) -> None:
        self.p.write_record(self.record)

    def _set_status(self, status: RunStatus) -> None:
        self.record.status = status
        self._save_record()
        self.p.emit("status", {"status": status.value})

    def _warn(self, message: str) -> None:
        if message not in self.record.warnings:
            self.record.warnings.append(message)
            self._save_record()
        self.p.emit("warning", {"message": message})

    def _cost_so_far(self) -> int:
        return summarize_cost(self.gateway.ledger.snapshot()).grand.total_tokens

    def _mark_unsafe(self, artifact_id: str) -> None:
        if artifact_id not in self.unsafe:
            self.unsafe.add(artifact_id)
            self.record.unsafe_artifacts = sorted(self.unsafe)
            self._save_record()

    def _feedback(self, page: int, revision: int, channel: str, issues: Iterable[str]) -> None:
        for issue in issues:
            self.p.feedback(f"page {page} attempt {revision} {channel}: {issue}")

    def _attempt_hook(self, stage: str) -> Callable[[int, AttemptRecord, bool], None]:
        def hook(page: int, attempt: AttemptRecord, accepted: bool) -> None:
            safe = attempt.bundle.image_safety.safe
            self.p.write_attempt(page, attempt.revision, {
                "accepted": accepted,
                **attempt.to_dict(),
            })
            if not safe:
                self._mark_unsafe(attempt.image)
            self.p.emit("attempt", {
                "stage": stage,
                "page": page,
                "revision": attempt.revision,
                "safe": safe,
                "safety_reason": attempt.bundle.image_safety.reason,
                "alpha": attempt.bundle.frame_score if safe else None,
                "eta": attempt.bundle.identity_score if safe else None,
                "frame_issues": list(attempt.bundle.frame_issues),
                "identity_issues": list(attempt.bundle.identity_issues),
                "accepted": accepted,
                "image": attempt.image if safe else None,
                "cost_tokens": self._cost_so_far(),
            })
        return hook

    # -- stages ----------------------------------------------------------------

    def execute(self) -> RunRecord:
        try:
            self._set_status(RunStatus.PLANNING)
            vas = self._run_vas()
            self._set_status(RunStatus.ILLUSTRATING)
            book = self._run_icr(vas)
            self._set_status(RunStatus.CALIBRATING)
            book = self._run_tcc(book, vas.plan)
            self._finish(book)
        except (SafetyExhausted, NoSafeCandidate) as exc:
            self._fail(RunStatus.FAILED_SAFETY, exc)
        except StoryloomError as exc:
            self._fail(RunStatus.FAILED, exc)
        except Exception as exc:  # record, never lose the cause
            log.exception("run %s crashed", self.record.run_id)
            self._fail(RunStatus.FAILED, exc)
        return self.record

    def _fail(self, status: RunStatus, exc: Exception) -> None:
        cause: dict = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NoSafeCandidate):
            cause["page"] = exc.page_index
        self.record.failure = cause
        self.record.status = status
        self._save_record()
        self.p.emit("failed", {"status": status.value, **cause})

    def _run_vas(self) -> VasOutput:
        inspiration = None
        if self.draft.inspiration_image:
            if not self.artifacts.exists(INSPIRATION_ARTIFACT):
                self.artifacts.register_external(
                    INSPIRATION_ARTIFACT, Path(self.draft.inspiration_image)
                )
            inspiration = INSPIRATION_ARTIFACT

        story = refine_draft(self.gateway, self.draft)
        self.p.write_json("refined_story.json", story.to_dict())
        cast = extract_characters(self.gateway, story, self.draft.style, warn=self._warn)
        self.p.write_json("cast.json", cast.to_dict())
        sheets = render_sheets(self.gateway, cast, self.draft.style, inspiration=inspiration)
        self.p.write_json("sheets.json", [s.to_dict() for s in sheets])
        plan = plan_pages(
            self.gateway, story, inspiration, self.draft.page_count,
            self.draft.style, cast, warn=self._warn,
        )
        self.p.write_json("plan.json", plan.to_dict())
        self.p.emit("planned", {
            "pages": len(plan),
            "plan": [{"index": p.index, "text": p.text} for p in plan.pages],
            "cast": [c.to_dict() for c in cast.characters],
            "sheets": [s.to_dict() for s in sheets],
            "cost_tokens": self._cost_so_far(),
        })
        return VasOutput(story=story, cast=cast, sheets=sheets, plan=plan)

    def _run_one_page(self, vas: VasOutput, spec, accepted: list[PageResult]) -> PageResult:
        self.p.emit("page", {"page": spec.index, "state": "start"})
        refs = retrieve_refs(
            spec, vas.cast, vas.sheets, accepted, self.config.context_window
        )
        result = refine_page(
            self.gateway, spec, refs, self.config,
            style=self.draft.style,
            on_attempt=self._attempt_hook("icr"),
            feedback=self._feedback,
        )
        self.p.write_json(f"pages/page_{spec.index}/result.json", result.to_dict())
        self.p.emit("page_done", {
            "page": spec.index,
            "image": result.image,
            "attempts": result.attempts,
            "acceptance": result.acceptance.value,
            "alpha": result.final_bundle.frame_score,
            "eta": result.final_bundle.identity_score,
            "cost_tokens": self._cost_so_far(),
        })
        return result

    def _run_icr(self, vas: VasOutput) -> Book:
        results: list[PageResult] = []
        if self.config.parallel_pages and self.config.context_window == 0:
            with ThreadPoolExecutor(max_workers=4) as pool:
                futures = [
                    pool.submit(self._run_one_page, vas, spec, [])
                    for spec in vas.plan.pages
                ]
                results = [f.result() for f in futures]
            results.sort(key=lambda r: r.index)
        else:
            for spec in vas.plan.pages:
                results.append(self._run_one_page(vas, spec, results))
        book = Book(
            pages=tuple(results), round=0, cast=vas.cast,
            sheets=vas.sheets, style=self.draft.style,
        )
        self.p.write_json(BOOK_FILE, book.to_manifest())
        return book

    def _run_tcc(self, book: Book, plan: PagePlan) -> Book:
        if not self.config.sequence_rounds:
            return book
        state: dict = {"book": book, "round": 0}

        def on_audit(round_no: int, audit: SequenceAudit) -> None:
            state["round"] = round_no
            self.p.write_json(f"rounds/round_{round_no}/audit.json", audit.to_dict())
            self.p.emit("audit", {
                "round": round_no,
                "beta": audit.beta,
                "problem_pages": sorted(audit.problem_pages),
                "critiques": [c.to_dict() for c in audit.critiques],
                "cost_tokens": self._cost_so_far(),
            })
            if audit.problem_pages:
                directives = plan_repairs(state["book"], audit, plan)
                self.p.write_json(
                    f"rounds/round_{round_no}/directives.json",
                    [d.to_dict() for d in directives],
                )

        def on_page_repaired(result: PageResult) -> None:
            state["book"] = state["book"].with_page(result)
            self.p.write_json(
                f"rounds/round_{state['round']}/pages/page_{result.index}.json",
                result.to_dict(),
            )
            self.p.write_json(f"pages/page_{result.index}/result.json", result.to_dict())
            self.p.write_json(
                BOOK_FILE, replace(state["book"], round=state["round"] + 1).to_manifest()
            )
            self.p.emit("page_done", {
                "page": result.index,
                "image": result.image,
                "attempts": result.attempts,
                "acceptance": result.acceptance.value,
                "alpha": result.final_bundle.frame_score,
                "eta": result.final_bundle.identity_score,
                "cost_tokens": self._cost_so_far(),
            })

        final_book, _audits = calibrate(
            self.gateway, book, self.config, plan,
            warn=self._warn,
            on_audit=on_audit,
            on_attempt=self._attempt_hook("tcc"),
            feedback=self._feedback,
            on_page_repaired=on_page_repaired,
        )
        return final_book

    def _finish(self, book: Book) -> None:
        self.p.write_json(BOOK_FILE, book.to_manifest())
        self.record.status = RunStatus.DONE
        self._save_record()
        self.p.emit("done", {
            "round": book.round,
            "pages": len(book.pages),
            "cost_tokens": self._cost_so_far(),
        })


# ---------------------------------------------------------------------------
# Service-level operations
# ---------------------------------------------------------------------------


def run_pipeline(
    store: RunStore,
    backend: Backend,
    draft: StoryDraft,
    config: RunConfig,
    *,
    label: str | None = None,
    run_id: str | None = None,
) -> RunRecord:
    """Create a run, execute it to completion, return the final record."""
    config = validate_config(config)
    persistence = store.create(draft, config, label=label, run_id=run_id)
    return PipelineRunner(persistence, backend).execute()


def resume_run(store: RunStore, run_id: str, backend: Backend) -> RunRecord:
    """Continue an interrupted or failed run. Completed calls replay from
    the transcript; nothing already committed is sent to the backend again."""
    persistence = store.open(run_id)
    record = persistence.read_record()
    if record.status is RunStatus.DONE:
        return record
    return PipelineRunner(persistence, backend).execute()


def request_repair(
    store: RunStore,
    run_id: str,
    backend: Backend,
    pages: Sequence[int] | None = None,
) -> RunRecord:
    """One human-triggered repair round over a finished book.

    With explicit pages they become the problem set regardless of the
    audit verdict; without, the audit decides (a consistent book repairs
    nothing). A failed repair keeps the previous book and surfaces a
    warning rather than destroying a finished run.
    """
    persistence = store.open(run_id)
    record = persistence.read_record()
    if record.status is not RunStatus.DONE:
        raise NotDone(run_id, record.status.value)
    book = persistence.book()
    if book is None:
        raise NotDone(run_id, "book missing")
    if pages is not None:
        if not pages:
            raise InvalidPageIndex(0, len(book.pages))
        for index in pages:
            if not 1 <= index <= len(book.pages):
                raise InvalidPageIndex(index, len(book.pages))

    config = validate_config(RunConfig.from_dict(record.config))
    plan = PagePlan.from_dict(persistence.read_json("plan.json"))
    runner = PipelineRunner(persistence, backend, continuation=True)
    record = runner.record
    try:
        runner._set_status(RunStatus.CALIBRATING)
        round_no = persistence.audit_count()
        audit = audit_sequence(runner.gateway, book, book.style)
        persistence.write_json(f"rounds/round_{round_no}/audit.json", audit.to_dict())
        persistence.emit("audit", {
            "round": round_no,
            "beta": audit.beta,
            "problem_pages": sorted(audit.problem_pages),
            "critiques": [c.to_dict() for c in audit.critiques],
            "cost_tokens": runner._cost_so_far(),
        })
        if pages is None and (audit.beta >= config.tau_beta or not audit.problem_pages):
            runner._set_status(RunStatus.DONE)
            persistence.emit("done", {
                "round": book.round,
                "pages": len(book.pages),
                "repairs": 0,
                "note": "no repairs needed",
                "cost_tokens": runner._cost_so_far(),
            })
            return persistence.read_record()

        targets = list(pages) if pages is not None else sorted(audit.problem_pages)
        directives = plan_repairs(book, audit, plan, override_pages=targets)
        persistence.write_json(
            f"rounds/round_{round_no}/directives.json", [d.to_dict() for d in directives]
        )
        current = book
        repaired_count = 0
        for directive in directives:
            refs = _repair_refs(directive, current, config)
            result = refine_page(
                runner.gateway, plan.page(directive.page_index), refs, config,
                style=current.style, strict=True, allow_fallback=True,
                prompt=directive.prompt,
                stage=Stage.TCC,
                on_attempt=runner._attempt_hook("repair"),
                feedback=runner._feedback,
            )
            repaired = replace(result, acceptance=Acceptance.REPAIRED)
            current = current.with_page(repaired)
            repaired_count += 1
            persistence.write_json(
                f"rounds/round_{round_no}/pages/page_{repaired.index}.json",
                repaired.to_dict(),
            )
            persistence.write_json(
                f"pages/page_{repaired.index}/result.json", repaired.to_dict()
            )
            persistence.emit("page_done", {
                "page": repaired.index,
                "image": repaired.image,
                "attempts": repaired.attempts,
                "acceptance": repaired.acceptance.value,
                "alpha": repaired.final_bundle.frame_score,
                "eta": repaired.final_bundle.identity_score,
                "cost_tokens": runner._cost_so_far(),
            })
        current = replace(current, round=book.round + 1)
        persistence.write_json(BOOK_FILE, current.to_manifest())
        runner._set_status(RunStatus.DONE)
        persistence.emit("done", {
            "round": current.round,
            "pages": len(current.pages),
            "repairs": repaired_count,
            "cost_tokens": runner._cost_so_far(),
        })
    except StoryloomError as exc:
        runner._warn(f"repair failed, keeping previous book: {exc}")
        runner._set_status(RunStatus.DONE)
    return persistence.read_record()


def export_book(
    store: RunStore,
    run_id: str,
    fmt: str = "bundle",
    out_dir: Path | str | None = None,
) -> Path:
    """Export the finished book as a directory bundle or a zip archive.

    The bundle holds manifest.json, one text file and one image file per
    page, and the character sheets. The archive's extracted contents equal
    the bundle exactly (fixed zip timestamps keep replays byte-identical).
    """
    persistence = store.open(run_id)
    record = persistence.read_record()
    if record.status is not RunStatus.DONE:
        raise NotDone(run_id, record.status.value)
    book = persistence.book()
    if book is None:
        raise NotDone(run_id, "book missing")

    unsafe = set(record.unsafe_artifacts)
    for page in book.pages:
        if page.image in unsafe:
            raise RuntimeError(
                f"refusing export: page {page.index} image flagged unsafe"
            )

    artifacts = ArtifactStore(persistence.root)
    base = Path(out_dir) if out_dir is not None else persistence.root / "export"
    bundle = base / "bundle"
    if bundle.exists():
        shutil.rmtree(bundle)
    (bundle / "pages").mkdir(parents=True)
    (bundle / "images" / "sheets").mkdir(parents=True)

    manifest = book.to_manifest()
    (bundle / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for page in book.pages:
        (bundle / "pages" / f"page_{page.index:02d}.txt").write_text(page.text + "\n")
        source = artifacts.absolute_path(page.image)
        shutil.copyfile(source, bundle / "images" / f"page_{page.index:02d}{source.suffix}")
    for sheet in book.sheets:
        source = artifacts.absolute_path(sheet.image)
        shutil.copyfile(
            source, bundle / "images" / "sheets" / f"{sheet.character_id}{source.suffix}"
        )

    if fmt == "bundle":
        return bundle
    if fmt != "archive":
        raise ValueError(f"unknown export format: {fmt}")
    archive = base / "book.zip"
    with zipfile.ZipFile(archive, "w", zipfile.ZIP_DEFLATED) as zf:
        for path in sorted(bundle.rglob("*")):
            if path.is_file():
                info = zipfile.ZipInfo(str(path.relative_to(bundle)))
                info.date_time = (1980, 1, 1, 0, 0, 0)
                zf.writestr(info, path.read_bytes())
    return archive


def run_view(persistence: RunPersistence) -> dict:
    """The API-facing summary of one run."""
    record = persistence.read_record()
    book = persistence.book()
    cost = summarize_cost(persistence.ledger_records())
    pages = []
    if book is not None:
        for page in book.pages:
            pages.append({
                "index": page.index,
                "text": page.text,
                "image": page.image,
                "attempts": page.attempts,
                "acceptance": page.acceptance.value,
                "alpha": page.final_bundle.frame_score,
                "eta": page.final_bundle.identity_score,
            })
    cast = persistence.read_json("cast.json") if persistence.has("cast.json") else []
    sheets = persistence.read_json("sheets.json") if persistence.has("sheets.json") else []
    return {
        "run_id": record.run_id,
        "label": record.label,
        "status": record.status.value,
        "draft": record.draft,
        "config": record.config,
        "warnings": record.warnings,
        "failure": record.failure,
        "round": book.round if book is not None else 0,
        "pages": pages,
        "cast": cast,
        "sheets": sheets,
        "cost": cost.to_dict(),
    }
