"""Recorded full chain-of-thought trajectories (TraceRecord JSONL)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping

from ..errors import MissingFieldError
from ..segmenter import BLANK_LINE
from ..verification import TaskKind

__all__ = ["TraceStep", "TraceRecord", "read_traces", "write_traces"]


@dataclass(frozen=True)
class TraceStep:
    text: str
    token_count: int
    trial_answer: str | None = None
    trial_confidence: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "token_count": self.token_count,
            "trial_answer": self.trial_answer,
            "trial_confidence": self.trial_confidence,
        }

    @classmethod
    def from_obj(cls, obj: Any) -> TraceStep:
        if isinstance(obj, Mapping):
            return cls(
                text=obj["text"],
                token_count=int(obj["token_count"]),
                trial_answer=obj.get("trial_answer"),
                trial_confidence=None if obj.get("trial_confidence") is None else float(obj["trial_confidence"]),
            )
        text, count, *rest = obj
        answer = rest[0] if rest else None
        conf = rest[1] if len(rest) > 1 else None
        return cls(text, int(count), answer, None if conf is None else float(conf))


@dataclass(frozen=True)
class TraceRecord:
    id: str
    question: str
    task: TaskKind
    steps: tuple[TraceStep, ...]
    final_answer: str
    gold_answer: str | None = None
    total_tokens: int = field(default=-1)

    def __post_init__(self) -> None:
        if not self.steps:
            raise MissingFieldError(f"trace {self.id!r} has no steps")
        for i, s in enumerate(self.steps, 1):
            if s.token_count < 1 and s.text:
                raise MissingFieldError(f"trace {self.id!r} step {i} has text but token_count < 1")
            if BLANK_LINE.search(s.text):
                # replay uses blank lines as the only step delimiter
                raise MissingFieldError(f"trace {self.id!r} step {i} contains a blank line")
        object.__setattr__(self, "task", TaskKind.parse(self.task))
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.total_tokens < 0:
            object.__setattr__(self, "total_tokens", self.reasoning_tokens)
        elif self.total_tokens < self.reasoning_tokens:
            raise MissingFieldError(
                f"trace {self.id!r}: total_tokens {self.total_tokens} < step token sum {self.reasoning_tokens}"
            )

    @property
    def reasoning_tokens(self) -> int:
        return sum(s.token_count for s in self.steps)

    @property
    def has_trial_answers(self) -> bool:
        return any(s.trial_answer is not None for s in self.steps)

    @property
    def reasoning_text(self) -> str:
        return "\n\n".join(s.text for s in self.steps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "question": self.question,
            "task": self.task.value,
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer,
            "gold_answer": self.gold_answer,
            "total_tokens": self.total_tokens,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TraceRecord:
        missing = [k for k in ("id", "question", "steps", "final_answer") if k not in d]
        if missing:
            raise MissingFieldError(f"trace record missing fields: {', '.join(missing)}")
        return cls(
            id=str(d["id"]),
            question=d["question"],
            task=TaskKind.parse(d.get("task", "math")),
            steps=tuple(TraceStep.from_obj(s) for s in d["steps"]),
            final_answer=d["final_answer"],
            gold_answer=d.get("gold_answer"),
            total_tokens=int(d.get("total_tokens", -1)),
        )


def read_traces(path: str | Path) -> Iterator[tuple[int, TraceRecord | Exception]]:
    """Yield ``(line_no, record_or_error)``; bad lines do not stop the read."""
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if obj.get("record") in ("header", "summary"):
                    continue
                yield no, TraceRecord.from_dict(obj)
            except Exception as exc:  # noqa: BLE001 - reported per line
                yield no, exc


def write_traces(path: str | Path, traces) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(json.dumps(t.to_dict(), ensure_ascii=False) + "\n")
