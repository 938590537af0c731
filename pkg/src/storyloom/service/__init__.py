"""Run persistence, pipeline execution, and the HTTP service."""

from .api import create_app
from .pipeline import (
    PipelineRunner,
    export_book,
    request_repair,
    resume_run,
    run_pipeline,
    run_view,
)
from .store import RunPersistence, RunRecord, RunStatus, RunStore

__all__ = [
    "PipelineRunner",
    "RunPersistence",
    "RunRecord",
    "RunStatus",
    "RunStore",
    "create_app",
    "export_book",
    "request_repair",
    "resume_run",
    "run_pipeline",
    "run_view",
]
