"""Command-line interface.

    storyloom run       generate a book from a draft
    storyloom repair    re-run repair on a finished book
    storyloom export    write the book bundle or archive
    storyloom cost      cost report for a run (CSV + figures)
    storyloom bench     benchmark suite: validate / run
    storyloom scenario  write the canonical scripted scenario
    storyloom serve     HTTP service (optionally with the studio UI)

Backends are chosen with --backend: `demo` (deterministic, no network),
`scripted:<scenario.json>`, or `http` (remote endpoint via environment).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Callable

import click

from .domain import DEFAULT_STYLE, Preset, RunConfig, StoryDraft
from .errors import StoryloomError
from .gateway import DemoBackend, ScriptedBackend, ScriptedScenario, summarize_cost
from .gateway.core import Backend
from .scenario_builder import demo_scenario
from .service import (
    RunStore,
    export_book,
    request_repair,
    resume_run,
    run_pipeline,
)
from .service.store import RunStatus


def make_backend_factory(spec: str) -> Callable[[], Backend]:
    """Parse a --backend value into a factory producing a fresh backend
    per operation (scripted scenarios hold per-run cursors)."""
    if spec == "demo":
        return lambda: DemoBackend()
    if spec.startswith("scripted:"):
        path = Path(spec.split(":", 1)[1])
        if not path.exists():
            raise click.BadParameter(f"scenario file not found: {path}")
        return lambda: ScriptedBackend(ScriptedScenario.load(path))
    if spec == "http":
        from .gateway.http_backend import HttpBackend

        return lambda: HttpBackend()
    raise click.BadParameter(
        f"unknown backend '{spec}' (use demo, scripted:<file>, or http)"
    )


def _config_from_options(
    preset: str,
    tau_alpha: float | None,
    tau_eta: float | None,
    tau_beta: float | None,
    retries: int | None,
    rounds: int | None,
    context_window: int | None,
) -> RunConfig:
    return RunConfig(
        preset=Preset(preset),
        tau_alpha=tau_alpha,
        tau_eta=tau_eta,
        tau_beta=tau_beta,
        frame_budget=retries,
        sequence_rounds=rounds,
        context_window=context_window,
    )


@click.group()
def main() -> None:
    """Safety-gated multi-agent storybook generation."""


@main.command("run")
@click.option("--draft", "draft_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--pages", type=int, required=True, help="target page count K")
@click.option("--style", default=DEFAULT_STYLE, show_default=False)
@click.option("--preset", type=click.Choice([p.value for p in Preset]), default="default")
@click.option("--tau-alpha", type=float, default=None)
@click.option("--tau-eta", type=float, default=None)
@click.option("--tau-beta", type=float, default=None)
@click.option("--retries", type=int, default=None, help="frame budget R")
@click.option("--rounds", type=int, default=None, help="sequence round limit M")
@click.option("--context-window", type=int, default=None)
@click.option("--backend", default="demo", show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("runs"), show_default=True)
@click.option("--inspiration", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--label", default=None, help="tag the run (bench uses story ids)")
@click.option("--run-id", default=None)
@click.option("--resume", "resume_id", default=None, help="resume an interrupted run")
def run_command(
    draft_path: Path, pages: int, style: str, preset: str,
    tau_alpha, tau_eta, tau_beta, retries, rounds, context_window,
    backend: str, out_dir: Path, inspiration: Path | None,
    label: str | None, run_id: str | None, resume_id: str | None,
) -> None:
    """Generate a storybook from a draft file."""
    factory = make_backend_factory(backend)
    store = RunStore(out_dir)
    try:
        if resume_id:
            record = resume_run(store, resume_id, factory())
        else:
            config = _config_from_options(
                preset, tau_alpha, tau_eta, tau_beta, retries, rounds, context_window
            )
            draft = StoryDraft(
                text=draft_path.read_text(),
                page_count=pages,
                style=style,
                inspiration_image=str(inspiration) if inspiration else None,
            )
            record = run_pipeline(
                store, factory(), draft, config, label=label, run_id=run_id
            )
    except (StoryloomError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc

    persistence = store.open(record.run_id)
    cost = summarize_cost(persistence.ledger_records())
    click.echo(f"run {record.run_id}: {record.status.value}")
    click.echo(f"  tokens: {cost.grand.total_tokens}  calls: {cost.grand.calls}")
    for warning in record.warnings:
        click.echo(f"  warning: {warning}")
    if record.failure:
        click.echo(f"  failure: {record.failure}")
    if record.status is not RunStatus.DONE:
        sys.exit(1)


@main.command("repair")
@click.option("--run", "run_id", required=True)
@click.option("--runs", "runs_dir", type=click.Path(exists=True, path_type=Path), default=Path("runs"), show_default=True)
@click.option("--pages", "pages_csv", default=None, help="comma-separated page indices")
@click.option("--backend", default="demo", show_default=True)
def repair_command(run_id: str, runs_dir: Path, pages_csv: str | None, backend: str) -> None:
    """Run one repair round on a finished book."""
    factory = make_backend_factory(backend)
    pages = None
    if pages_csv:
        pages = [int(p.strip()) for p in pages_csv.split(",") if p.strip()]
    store = RunStore(runs_dir)
    try:
        record = request_repair(store, run_id, factory(), pages=pages)
    except StoryloomError as exc:
        raise click.ClickException(str(exc)) from exc
    book = store.open(run_id).book()
    click.echo(f"run {run_id}: {record.status.value}, book round {book.round}")
    for warning in record.warnings:
        click.echo(f"  warning: {warning}")


@main.command("export")
@click.option("--run", "run_id", required=True)
@click.option("--runs", "runs_dir", type=click.Path(exists=True, path_type=Path), default=Path("runs"), show_default=True)
@click.option("--format", "fmt", type=click.Choice(["bundle", "archive"]), default="bundle")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None)
def export_command(run_id: str, runs_dir: Path, fmt: str, out_dir: Path | None) -> None:
    """Export the finished book."""
    store = RunStore(runs_dir)
    try:
        target = export_book(store, run_id, fmt, out_dir=out_dir)
    except StoryloomError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(str(target))


@main.command("cost")
@click.option("--run", "run_id", required=True)
@click.option("--runs", "runs_dir", type=click.Path(exists=True, path_type=Path), default=Path("runs"), show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="also write cost.csv and figures here")
def cost_command(run_id: str, runs_dir: Path, out_dir: Path | None) -> None:
    """Token/runtime cost report for a run."""
    store = RunStore(runs_dir)
    report = summarize_cost(store.open(run_id).ledger_records())
    click.echo(f"total tokens: {report.grand.total_tokens} "
               f"({report.grand.calls} calls, {report.grand.wall_ms} ms)")
    for stage, totals in sorted(report.per_stage.items()):
        click.echo(f"  {stage:6} {totals.total_tokens:>8} tokens in {totals.calls} calls")
    if out_dir is not None:
        from .reporting import write_cost_report

        for path in write_cost_report(report, out_dir):
            click.echo(f"wrote {path}")


@main.group("bench")
def bench_group() -> None:
    """Structured long-horizon consistency benchmark."""


@bench_group.command("validate")
@click.option("--suite", "suite_dir", type=click.Path(exists=True, path_type=Path), default=None,
              help="spec directory (default: the shipped suite)")
def bench_validate(suite_dir: Path | None) -> None:
    """Load the suite and print its structure."""
    from .bench import load_suite, shipped_suite

    specs = load_suite(suite_dir) if suite_dir else shipped_suite()
    kinds: dict[str, int] = {}
    for spec in specs:
        for rule in spec.all_rules():
            kinds[rule.kind.value] = kinds.get(rule.kind.value, 0) + 1
        click.echo(
            f"{spec.story_id}: {spec.pages} pages, {len(spec.characters)} characters, "
            f"{len(spec.rule_groups)} rule groups, {len(spec.all_rules())} rules"
        )
    click.echo(f"stories: {len(specs)}  scenes: {sum(s.pages for s in specs)}  "
               f"groups: {sum(len(s.rule_groups) for s in specs)}")
    click.echo("rules by kind: " + ", ".join(f"{k}={v}" for k, v in sorted(kinds.items())))


@bench_group.command("run")
@click.option("--suite", "suite_dir", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--run", "--runs", "runs_dir", type=click.Path(exists=True, path_type=Path),
              required=True, help="runs root; runs are matched to stories by label")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
def bench_run(suite_dir: Path | None, runs_dir: Path, out_dir: Path, figures: bool) -> None:
    """Check every story's rules against its generated run."""
    from .bench import evaluate_suite, load_suite, shipped_suite, write_suite_report

    specs = load_suite(suite_dir) if suite_dir else shipped_suite()
    store = RunStore(runs_dir)
    runs_by_story = {}
    for record in store.iter_records():
        if record.label and record.status is RunStatus.DONE:
            runs_by_story.setdefault(record.label, store.open(record.run_id))
    report = evaluate_suite(specs, runs_by_story)
    for path in write_suite_report(report, specs, out_dir, figures=figures):
        click.echo(f"wrote {path}")
    overall = report.overall_consistency
    click.echo(f"overall consistency: {'n/a' if overall is None else f'{overall:.4f}'}")


@main.group("scenario")
def scenario_group() -> None:
    """Scripted scenario tools."""


@scenario_group.command("demo")
@click.option("--pages", type=int, default=5, show_default=True)
@click.option("--draft", "draft_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--style", default=DEFAULT_STYLE)
@click.option("--preset", type=click.Choice([p.value for p in Preset]), default="default")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
def scenario_demo(pages: int, draft_path: Path | None, style: str, preset: str, out_path: Path) -> None:
    """Write the canonical happy-path scenario for a K-page run."""
    text = draft_path.read_text() if draft_path else (
        "Milo the fox finds a lantern. Sage the owl helps him home."
    )
    scenario = demo_scenario(
        draft_text=text, page_count=pages, style=style,
        config=RunConfig(preset=Preset(preset)),
    )
    scenario.save(out_path)
    click.echo(f"wrote {out_path} ({len(scenario.steps)} steps)")


@main.command("serve")
@click.option("--runs", "runs_dir", type=click.Path(path_type=Path), default=Path("runs"), show_default=True)
@click.option("--backend", default="demo", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8701, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(exists=True, path_type=Path), default=None,
              help="serve a built studio UI from this directory")
def serve_command(runs_dir: Path, backend: str, host: str, port: int, ui_dir: Path | None) -> None:
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    factory = make_backend_factory(backend)
    app = create_app(runs_dir, factory, ui_dir=ui_dir)
    click.echo(f"serving runs from {runs_dir} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
