"""Token/runtime cost ledger: append-only usage records and roll-ups."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .roles import Role


class Stage(str, Enum):
    VAS = "vas"
    ICR = "icr"
    TCC = "tcc"
    BENCH = "bench"


@dataclass(frozen=True)
class UsageRecord:
    role: Role
    input_tokens: int
    output_tokens: int
    wall_ms: int
    stage: Stage
    page_index: int | None = None

    def __post_init__(self):
        for name in ("input_tokens", "output_tokens", "wall_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_ms": self.wall_ms,
            "stage": self.stage.value,
            "page_index": self.page_index,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "UsageRecord":
        return cls(
            role=Role(data["role"]),
            input_tokens=data["input_tokens"],
            output_tokens=data["output_tokens"],
            wall_ms=data["wall_ms"],
            stage=Stage(data["stage"]),
            page_index=data.get("page_index"),
        )


class CostLedger:
    """Thread-safe append-only log of usage records."""

    def __init__(self, records: Iterable[UsageRecord] = ()):
        self._records: list[UsageRecord] = list(records)
        self._lock = threading.Lock()

    def append(self, record: UsageRecord) -> None:
        with self._lock:
            self._records.append(record)

    def snapshot(self) -> tuple[UsageRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


@dataclass
class Totals:
    input_tokens: int = 0
    output_tokens: int = 0
    wall_ms: int = 0
    calls: int = 0

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def add(self, record: UsageRecord) -> None:
        self.input_tokens += record.input_tokens
        self.output_tokens += record.output_tokens
        self.wall_ms += record.wall_ms
        self.calls += 1

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "total_tokens": self.total_tokens,
            "wall_ms": self.wall_ms,
            "calls": self.calls,
        }


@dataclass
class CostReport:
    grand: Totals = field(default_factory=Totals)
    per_stage: dict[str, Totals] = field(default_factory=dict)
    per_page: dict[int, Totals] = field(default_factory=dict)
    per_role: dict[str, Totals] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "grand": self.grand.to_dict(),
            "per_stage": {k: v.to_dict() for k, v in sorted(self.per_stage.items())},
            "per_page": {str(k): v.to_dict() for k, v in sorted(self.per_page.items())},
            "per_role": {k: v.to_dict() for k, v in sorted(self.per_role.items())},
        }


def summarize_cost(records: Iterable[UsageRecord]) -> CostReport:
    """Roll a ledger snapshot up into grand, per-stage, per-page, and
    per-role totals. Pure; grand totals equal the record sum exactly."""
    report = CostReport()
    for record in records:
        report.grand.add(record)
        report.per_stage.setdefault(record.stage.value, Totals()).add(record)
        if record.page_index is not None:
            report.per_page.setdefault(record.page_index, Totals()).add(record)
        report.per_role.setdefault(record.role.value, Totals()).add(record)
    return report
