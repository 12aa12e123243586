"""Scripted generation for tests and the CLI ``stub`` backend."""

from __future__ import annotations

import hashlib
import random
from typing import Callable, Sequence

from ..verification import TaskKind
from .base import ProbeCompletion, TokenEvent, TokenStream
from .replay import synth_completion
from .traces import TraceRecord, TraceStep

__all__ = ["ScriptedBackend", "synthetic_trace", "novel_text"]


class ScriptedBackend:
    """Emit fixed token events; answer probes from a script.

    ``probes`` is either a sequence of ``(answer, confidence)`` consumed in
    call order, or a callable ``(context) -> (answer, confidence)``.
    """

    def __init__(
        self,
        events: Sequence[TokenEvent | str],
        probes: Sequence[tuple[str, float]] | Callable[[str], tuple[str, float]] = (),
        task: TaskKind = TaskKind.MATH,
    ) -> None:
        self.events = [e if isinstance(e, TokenEvent) else TokenEvent(e) for e in events]
        self._probes = probes
        self.task = task
        self.probe_contexts: list[str] = []
        self.streams_opened = 0
        self.cancelled = 0

    def stream(self, question: str | None = None) -> TokenStream:
        self.streams_opened += 1

        def on_cancel() -> None:
            self.cancelled += 1

        return TokenStream(iter(list(self.events)), on_cancel)

    def probe(self, question: str | None, context: str, max_tokens: int) -> ProbeCompletion:
        if callable(self._probes):
            answer, conf = self._probes(context)
        else:
            i = len(self.probe_contexts)
            answer, conf = self._probes[i] if i < len(self._probes) else ("", 0.0)
        self.probe_contexts.append(context)
        return synth_completion(answer, conf, self.task, max_tokens)


_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def novel_text(rng: random.Random, n_chars: int) -> str:
    """Pseudo-words with essentially no trigram overlap between calls."""
    words = []
    size = 0
    while size < n_chars:
        w = "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(3, 9)))
        words.append(w)
        size += len(w) + 1
    return " ".join(words)[:n_chars].rstrip() + "."


def synthetic_trace(
    question: str,
    n_novel: int = 8,
    n_redundant: int = 4,
    answer: str = "42",
    confidence: float = 0.99,
    step_chars: int = 320,
    task: TaskKind = TaskKind.MATH,
) -> TraceRecord:
    """A deterministic chain: ``n_novel`` distinct steps then a repetitive tail.

    The tail steps restate one conclusion with the trial answer recorded at
    ``confidence``; the seed is derived from ``question``.
    """
    seed = int.from_bytes(hashlib.sha256(question.encode("utf-8")).digest()[:8], "little")
    rng = random.Random(seed)
    steps = []
    for i in range(n_novel):
        text = novel_text(rng, step_chars)
        steps.append(TraceStep(text, (len(text) + 3) // 4, None, None))
    core = f"So the value we keep getting is {answer}. " + novel_text(rng, step_chars)
    for i in range(n_redundant):
        text = f"Checking once more, pass {i + 1}. " + core
        steps.append(TraceStep(text, (len(text) + 3) // 4, answer, confidence))
    qid = hashlib.sha256(question.encode("utf-8")).hexdigest()[:12]
    return TraceRecord(
        id=qid,
        question=question,
        task=task,
        steps=tuple(steps),
        final_answer=answer,
        gold_answer=None,
    )
