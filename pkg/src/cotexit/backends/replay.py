"""Offline generation backend that replays a recorded trace.

The main stream re-emits the recorded steps, joined by blank lines, as one
event per recorded token.  Probes look up the trial answer recorded for the
last step fully contained in the probe's prefix, so counterfactual analyses
reproduce exactly what the trace recorded.
"""

from __future__ import annotations

import math
from typing import Iterator

from ..segmenter import approx_tokens
from ..verification import PROBE_SUFFIXES, TaskKind
from .base import ProbeCompletion, TokenEvent, TokenStream
from .traces import TraceRecord, TraceStep

__all__ = ["ReplayBackend", "split_even", "STEP_SEPARATOR", "STUB_CONFIDENCE"]

STEP_SEPARATOR = "\n\n"
STUB_CONFIDENCE = 0.5
_DEFAULT_CONFIDENCE = 0.5
_TOKEN_CHARS = 4


def split_even(text: str, n: int) -> list[str]:
    """Cut ``text`` into ``n`` contiguous pieces whose lengths differ by at most one.

    The first ``len(text) % n`` pieces carry the extra character.
    """
    if n <= 0:
        return [text] if text else []
    q, r = divmod(len(text), n)
    out = []
    pos = 0
    for i in range(n):
        size = q + (1 if i < r else 0)
        out.append(text[pos : pos + size])
        pos += size
    return out


class ReplayBackend:
    """Replays one :class:`TraceRecord`.  Each call to :meth:`stream` starts over."""

    def __init__(self, trace: TraceRecord, logprob: float = 0.0) -> None:
        self.trace = trace
        self.logprob = logprob
        self.probe_calls = 0
        ends = []
        pos = 0
        for i, step in enumerate(trace.steps):
            pos += len(step.text)
            ends.append(pos)  # end of step body, separator excluded
            if i < len(trace.steps) - 1:
                pos += len(STEP_SEPARATOR)
        self._step_ends = ends
        self._text_len = pos

    @property
    def text(self) -> str:
        return STEP_SEPARATOR.join(s.text for s in self.trace.steps)

    def _events(self) -> Iterator[TokenEvent]:
        last = len(self.trace.steps) - 1
        for i, step in enumerate(self.trace.steps):
            body = step.text + (STEP_SEPARATOR if i < last else "")
            for piece in split_even(body, step.token_count):
                yield TokenEvent(piece, self.logprob)

    def stream(self, question: str | None = None) -> TokenStream:
        return TokenStream(self._events())

    def _steps_covered(self, reasoning_len: int) -> int:
        return sum(1 for e in self._step_ends if e <= reasoning_len)

    def lookup(self, reasoning_len: int) -> tuple[int, str, float]:
        """``(step_count, answer, confidence)`` a probe at this prefix length sees."""
        j = self._steps_covered(reasoning_len)
        if j == 0:
            return 0, f"stub-{j}", STUB_CONFIDENCE
        step: TraceStep = self.trace.steps[j - 1]
        if j == len(self.trace.steps) and reasoning_len >= self._text_len:
            conf = step.trial_confidence if step.trial_confidence is not None else 1.0
            return j, self.trace.final_answer, conf
        if step.trial_answer is None:
            return j, f"stub-{j}", STUB_CONFIDENCE
        conf = step.trial_confidence if step.trial_confidence is not None else _DEFAULT_CONFIDENCE
        return j, step.trial_answer, conf

    def probe(self, question: str | None, context: str, max_tokens: int) -> ProbeCompletion:
        self.probe_calls += 1
        task = self.trace.task
        suffix = PROBE_SUFFIXES[task]
        reasoning_len = len(context) - len(suffix) if context.endswith(suffix) else len(context)
        _, answer, conf = self.lookup(reasoning_len)
        return synth_completion(answer, conf, task, max_tokens)


def synth_completion(answer: str, confidence: float, task: TaskKind, max_tokens: int) -> ProbeCompletion:
    """Deterministic probe continuation encoding ``answer`` at ``confidence``.

    The answer is cut into ``ceil(len/4)`` tokens, each with log-probability
    ``log(confidence)``, so the geometric mean recovers ``confidence``
    exactly.  Math and multiple-choice answers are followed by a closing brace
    token with log-probability 0.
    """
    lp = math.log(confidence) if confidence > 0 else -50.0
    n = max(1, approx_tokens(len(answer)))
    pieces = [p for p in split_even(answer, n)]
    tokens = list(pieces)
    logprobs = [lp] * len(pieces)
    top = None
    if task is not TaskKind.CODE:
        tokens.append("}")
        logprobs.append(0.0)
    if task is TaskKind.MULTIPLE_CHOICE:
        rest = (1.0 - confidence) / 3
        other = math.log(rest) if rest > 0 else float("-inf")
        first = {c: other for c in "ABCD" if c != answer.strip()}
        first[answer.strip()] = lp
        top = tuple([first] + [{t: l} for t, l in zip(tokens[1:], logprobs[1:])])
    tokens = tokens[:max_tokens]
    logprobs = logprobs[:max_tokens]
    if top is not None:
        top = top[:max_tokens]
    return ProbeCompletion(tuple(tokens), tuple(logprobs), top)
