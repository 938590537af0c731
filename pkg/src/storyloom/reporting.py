"""Report rendering shared by the CLI surfaces: delimited tables plus
matplotlib figures written next to them."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .gateway import CostReport

FIGURE_DPI = 120


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def bar_figure(
    path: Path,
    labels: Sequence[str],
    values: Sequence[float],
    *,
    title: str,
    ylabel: str,
    ylim: tuple[float, float] | None = None,
    color: str = "#4c72b0",
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.55 * len(labels) + 1.5), 3.2))
    ax.bar(range(len(labels)), values, color=color)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if ylim is not None:
        ax.set_ylim(*ylim)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    return path


def write_cost_report(report: CostReport, out_dir: Path | str) -> list[Path]:
    """cost.csv plus per-stage and per-page token figures."""
    out = Path(out_dir)
    written = []
    rows = [["grand", "", report.grand.input_tokens, report.grand.output_tokens,
             report.grand.total_tokens, report.grand.wall_ms, report.grand.calls]]
    for stage, totals in sorted(report.per_stage.items()):
        rows.append(["stage", stage, totals.input_tokens, totals.output_tokens,
                     totals.total_tokens, totals.wall_ms, totals.calls])
    for page, totals in sorted(report.per_page.items()):
        rows.append(["page", page, totals.input_tokens, totals.output_tokens,
                     totals.total_tokens, totals.wall_ms, totals.calls])
    for role, totals in sorted(report.per_role.items()):
        rows.append(["role", role, totals.input_tokens, totals.output_tokens,
                     totals.total_tokens, totals.wall_ms, totals.calls])
    written.append(write_csv(
        out / "cost.csv",
        ["scope", "key", "input_tokens", "output_tokens", "total_tokens", "wall_ms", "calls"],
        rows,
    ))

    if report.per_stage:
        stages = sorted(report.per_stage)
        written.append(bar_figure(
            out / "cost_by_stage.png",
            stages,
            [report.per_stage[s].total_tokens for s in stages],
            title="Token usage by stage",
            ylabel="tokens",
        ))
    if report.per_page:
        pages = sorted(report.per_page)
        written.append(bar_figure(
            out / "cost_by_page.png",
            [str(p) for p in pages],
            [report.per_page[p].total_tokens for p in pages],
            title="Token usage by page",
            ylabel="tokens",
            color="#55a868",
        ))
    return written
