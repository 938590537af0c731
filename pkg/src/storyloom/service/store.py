"""Run persistence: one directory per run holding every artifact the
pipeline produces, an append-only transcript/ledger, and an event log.

Layout under <root>/<run_id>/:

    record.json            run summary: draft, config, status, warnings,
                           failure cause, unsafe artifact ids
    transcript.jsonl       one line per completed gateway call
    ledger.jsonl           usage records, same order as the transcript
    events.jsonl           progress events with monotone seq numbers
    refined_story.json, cast.json, sheets.json, plan.json
    artifacts/             image files / structured stand-ins
    pages/page_<i>/        attempt_<r>.json + result.json
    rounds/round_<n>/      audit.json, directives.json, pages/page_<k>.json
    book.json              current book manifest
    feedback.log           director issues and safety reasons, append-only

Transcript and ledger lines are committed in unit batches (a unit is one
resumable step: a VAS operation, one page, one audit, one page repair), so
a crash mid-unit leaves a clean prefix and the unit replays from scratch.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping

from ..domain import Book, RunConfig, StoryDraft
from ..errors import RunNotFound
from ..gateway import UsageRecord
from ..gateway.core import CallRecord

RECORD_FILE = "record.json"
TRANSCRIPT_FILE = "transcript.jsonl"
LEDGER_FILE = "ledger.jsonl"
EVENTS_FILE = "events.jsonl"
BOOK_FILE = "book.json"
FEEDBACK_FILE = "feedback.log"


class RunStatus(str, Enum):
    PLANNING = "planning"
    ILLUSTRATING = "illustrating"
    CALIBRATING = "calibrating"
    DONE = "done"
    FAILED_SAFETY = "failed_safety"
    FAILED = "failed"


TERMINAL_STATUSES = frozenset({RunStatus.DONE, RunStatus.FAILED_SAFETY, RunStatus.FAILED})


def _dump(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True)


def _write_atomic(path: Path, text: str) -> None:
    # temp-then-rename so concurrent readers never see a torn file
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    entries = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            entries.append(json.loads(line))
        except json.JSONDecodeError:
            break  # torn tail mid-append; the next poll sees the full line
    return entries


@dataclass
class RunRecord:
    """The mutable run summary persisted as record.json."""

    run_id: str
    draft: dict
    config: dict
    status: RunStatus = RunStatus.PLANNING
    warnings: list[str] = field(default_factory=list)
    failure: dict | None = None
    unsafe_artifacts: list[str] = field(default_factory=list)
    label: str | None = None
    created_at: str = ""

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "draft": self.draft,
            "config": self.config,
            "status": self.status.value,
            "warnings": self.warnings,
            "failure": self.failure,
            "unsafe_artifacts": self.unsafe_artifacts,
            "label": self.label,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunRecord":
        return cls(
            run_id=data["run_id"],
            draft=dict(data["draft"]),
            config=dict(data["config"]),
            status=RunStatus(data["status"]),
            warnings=list(data.get("warnings", ())),
            failure=data.get("failure"),
            unsafe_artifacts=list(data.get("unsafe_artifacts", ())),
            label=data.get("label"),
            created_at=data.get("created_at", ""),
        )


class RunPersistence:
    """All file IO for one run directory."""

    def __init__(self, root: Path):
        self.root = root
        self._lock = threading.Lock()
        self._event_seq = self._last_event_seq()
        self._transcript_count = self.transcript_length()

    # -- record ------------------------------------------------------------

    @property
    def record_path(self) -> Path:
        return self.root / RECORD_FILE

    def read_record(self) -> RunRecord:
        return RunRecord.from_dict(json.loads(self.record_path.read_text()))

    def write_record(self, record: RunRecord) -> None:
        with self._lock:
            _write_atomic(self.record_path, _dump(record.to_dict()))

    # -- documents ----------------------------------------------------------

    def write_json(self, name: str, data: Any) -> None:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_atomic(path, _dump(data))

    def read_json(self, name: str) -> Any:
        return json.loads((self.root / name).read_text())

    def has(self, name: str) -> bool:
        return (self.root / name).exists()

    # -- transcript / ledger (unit-batched) ----------------------------------

    def commit_call(self, call: CallRecord) -> int:
        """Append one completed call to the transcript and the ledger.
        Returns the call's sequence number."""
        with self._lock:
            seq = self._transcript_count
            self._transcript_count += 1
            line = json.dumps({
                "seq": seq,
                "stage": call.stage.value,
                "page": call.page_index,
                "role": call.role.value,
                "request": call.request,
                "response": call.response,
                "usage": {
                    "input_tokens": call.usage.input_tokens,
                    "output_tokens": call.usage.output_tokens,
                    "wall_ms": call.usage.wall_ms,
                },
                "step": call.scenario_step,
            }, sort_keys=True)
            with (self.root / TRANSCRIPT_FILE).open("a") as fh:
                fh.write(line + "\n")
            with (self.root / LEDGER_FILE).open("a") as fh:
                fh.write(json.dumps(call.usage.to_dict(), sort_keys=True) + "\n")
        return seq

    def transcript(self) -> list[dict]:
        return _jsonl(self.root / TRANSCRIPT_FILE)

    def transcript_length(self) -> int:
        path = self.root / TRANSCRIPT_FILE
        if not path.exists():
            return 0
        return sum(1 for line in path.read_text().splitlines() if line.strip())

    def ledger_records(self) -> list[UsageRecord]:
        return [UsageRecord.from_dict(line) for line in _jsonl(self.root / LEDGER_FILE)]

    def consumed_scenario_steps(self) -> list[int]:
        return [
            line["step"] for line in self.transcript() if line.get("step") is not None
        ]

    # -- events ---------------------------------------------------------------

    def _last_event_seq(self) -> int:
        lines = _jsonl(self.root / EVENTS_FILE)
        return lines[-1]["seq"] + 1 if lines else 0

    def emit(self, event: str, data: Mapping) -> int:
        with self._lock:
            seq = self._event_seq
            self._event_seq += 1
            line = json.dumps({"seq": seq, "event": event, "data": dict(data)}, sort_keys=True)
            with (self.root / EVENTS_FILE).open("a") as fh:
                fh.write(line + "\n")
        return seq

    def events(self, after: int = -1) -> list[dict]:
        return [e for e in _jsonl(self.root / EVENTS_FILE) if e["seq"] > after]

    # -- feedback log -----------------------------------------------------------

    def feedback(self, line: str) -> None:
        with self._lock:
            with (self.root / FEEDBACK_FILE).open("a") as fh:
                fh.write(line + "\n")

    # -- pages and rounds ---------------------------------------------------------

    def page_dir(self, index: int) -> Path:
        return self.root / "pages" / f"page_{index}"

    def write_attempt(self, page: int, revision: int, data: Mapping) -> None:
        path = self.page_dir(page) / f"attempt_{revision}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_dump(dict(data)))

    def attempts(self, page: int) -> list[dict]:
        directory = self.page_dir(page)
        if not directory.exists():
            return []
        files = sorted(directory.glob("attempt_*.json"), key=lambda p: int(p.stem.split("_")[1]))
        return [json.loads(p.read_text()) for p in files]

    def round_dir(self, index: int) -> Path:
        return self.root / "rounds" / f"round_{index}"

    def audit_count(self) -> int:
        rounds = self.root / "rounds"
        if not rounds.exists():
            return 0
        return sum(1 for p in rounds.glob("round_*/audit.json"))

    def book(self) -> Book | None:
        if not self.has(BOOK_FILE):
            return None
        return Book.from_manifest(self.read_json(BOOK_FILE))


class RunStore:
    """Creates, opens, and lists runs under a root directory."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def create(
        self,
        draft: StoryDraft,
        config: RunConfig,
        label: str | None = None,
        run_id: str | None = None,
    ) -> RunPersistence:
        run_id = run_id or uuid.uuid4().hex[:12]
        run_dir = self.root / run_id
        if run_dir.exists():
            raise ValueError(f"run {run_id} already exists")
        run_dir.mkdir(parents=True)
        persistence = RunPersistence(run_dir)
        record = RunRecord(
            run_id=run_id,
            draft=draft.to_dict(),
            config=config.to_dict(),
            label=label,
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        persistence.write_record(record)
        return persistence

    def open(self, run_id: str) -> RunPersistence:
        run_dir = self.root / run_id
        if not (run_dir / RECORD_FILE).exists():
            raise RunNotFound(run_id)
        return RunPersistence(run_dir)

    def exists(self, run_id: str) -> bool:
        return (self.root / run_id / RECORD_FILE).exists()

    def run_ids(self) -> list[str]:
        return sorted(
            p.parent.name for p in self.root.glob(f"*/{RECORD_FILE}")
        )

    def iter_records(self) -> Iterator[RunRecord]:
        for run_id in self.run_ids():
            yield self.open(run_id).read_record()
