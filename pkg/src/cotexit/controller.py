"""Online early-exit control loop.

Per completed step: score redundancy; flagged steps get a trial-answer probe,
which joins the open verification window (or anchors a new one).  A full
window either exits or is discarded.  The loop breaker is consulted after
verification on every step.  Stream end, or a safety cap, means full
reasoning followed by one closing probe for the answer.
"""

from __future__ import annotations

import bisect
import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

from .backends.base import EmbeddingBackend, GenerationBackend
from .errors import BackendError, ConfigurationError, DomainError
from .loop_breaker import LoopBreaker, LoopBreakerConfig
from .redundancy import Embedding, RedundancyConfig, redundancy_score
from .segmenter import IncrementalSegmenter, ReasoningStep, SegmenterConfig, reconstruct, with_tokens
from .verification import (
    ProbeResult,
    TaskKind,
    VerificationConfig,
    VerificationWindow,
    build_probe_prompt,
    exit_decision,
    probe_result,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ExitKind",
    "ControllerAction",
    "ExitConfig",
    "GenerationSettings",
    "EmbeddingSettings",
    "EpisodeResult",
    "EpisodeController",
    "EpisodeError",
    "run_episode",
    "run",
    "token_reduction",
]


class ExitKind(str, enum.Enum):
    VERIFIED = "VerifiedExit"
    LOOP_BREAKER = "LoopBreakerExit"
    FULL = "FullReasoning"


class ControllerAction(str, enum.Enum):
    CONTINUE = "Continue"
    PROBE = "Probe"
    EXIT_VERIFIED = "ExitVerified"
    EXIT_LOOP_BREAKER = "ExitLoopBreaker"
    EXIT_FULL = "ExitFull"


_EXITS = {ControllerAction.EXIT_VERIFIED, ControllerAction.EXIT_LOOP_BREAKER, ControllerAction.EXIT_FULL}


@dataclass(frozen=True)
class GenerationSettings:
    temperature: float = 0.6
    top_p: float = 0.95


@dataclass(frozen=True)
class EmbeddingSettings:
    backend: str = "hash"
    dim: int = 256


@dataclass(frozen=True)
class ExitConfig:
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    redundancy: RedundancyConfig = field(default_factory=RedundancyConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    loop_breaker: LoopBreakerConfig = field(default_factory=LoopBreakerConfig)
    task: TaskKind = TaskKind.MATH
    max_steps: int = 512
    max_total_tokens: int = 32768
    end_of_thinking: str = "</think>"
    # let a failed window's later probes seed the next window
    slide_windows: bool = False
    generation: GenerationSettings = field(default_factory=GenerationSettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)

    def __post_init__(self) -> None:
        object.__setattr__(self, "task", TaskKind.parse(self.task))
        if self.max_steps < 1 or self.max_total_tokens < 1:
            raise ConfigurationError("max_steps and max_total_tokens must be positive")


@dataclass
class EpisodeResult:
    question_id: str
    exit_kind: ExitKind
    stop_step: int
    steps_total_emitted: int
    reasoning_tokens: int
    probe_tokens: int
    answer_tokens: int
    total_tokens: int
    final_answer: str
    probes: list[ProbeResult]
    retained_prefix: str
    retained_tokens: int = 0
    lookahead_tokens: int = 0
    capped: bool = False
    flagged_steps: list[int] = field(default_factory=list)
    step_ends: list[int] = field(default_factory=list)
    step_tokens: list[int] = field(default_factory=list)
    error: str | None = None

    def __post_init__(self) -> None:
        self.exit_kind = ExitKind(self.exit_kind)

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "exit_kind": self.exit_kind.value,
            "stop_step": self.stop_step,
            "steps_total_emitted": self.steps_total_emitted,
            "reasoning_tokens": self.reasoning_tokens,
            "probe_tokens": self.probe_tokens,
            "answer_tokens": self.answer_tokens,
            "total_tokens": self.total_tokens,
            "final_answer": self.final_answer,
            "probes": [p.to_dict() for p in self.probes],
            "retained_prefix": self.retained_prefix,
            "retained_tokens": self.retained_tokens,
            "lookahead_tokens": self.lookahead_tokens,
            "capped": self.capped,
            "flagged_steps": list(self.flagged_steps),
            "step_ends": list(self.step_ends),
            "step_tokens": list(self.step_tokens),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EpisodeResult:
        kw = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        kw["probes"] = [ProbeResult.from_dict(p) for p in d.get("probes", [])]
        return cls(**kw)

    def prefix_at(self, step: int) -> str:
        """Retained reasoning through ``step`` (1-based), trailing blank lines dropped."""
        if not 1 <= step <= len(self.step_ends):
            raise IndexError(f"step {step} outside retained steps 1..{len(self.step_ends)}")
        return self.retained_prefix[: self.step_ends[step - 1]].rstrip()


class EpisodeError(BackendError):
    """A backend failed mid-episode; ``partial`` holds what was accounted so far."""

    def __init__(self, message: str, partial: EpisodeResult) -> None:
        super().__init__(message)
        self.partial = partial


def token_reduction(tok_method: float, tok_full: float) -> float:
    """Percentage of tokens saved relative to the full run; negative if more were used."""
    if tok_full <= 0:
        raise DomainError(f"full-run token count must be positive, got {tok_full}")
    return (1.0 - tok_method / tok_full) * 100.0


class EpisodeController:
    """Decision state for one episode.  Not thread-safe; one per episode.

    Drive it with :meth:`on_step` for every segmented step and, when that
    returns ``PROBE``, with :meth:`on_probe` for the probe's result.
    """

    def __init__(self, cfg: ExitConfig, embedder: EmbeddingBackend) -> None:
        self.cfg = cfg
        self.embedder = embedder
        self.history: list[Embedding] = []
        self.steps: list[ReasoningStep] = []
        self.probes: list[ProbeResult] = []
        self.flagged: list[int] = []
        self.window: VerificationWindow | None = None
        self.loop = LoopBreaker(cfg.loop_breaker)
        self.exit_probe: ProbeResult | None = None
        self._awaiting: ReasoningStep | None = None

    def on_step(self, step: ReasoningStep) -> ControllerAction:
        if self._awaiting is not None:
            raise RuntimeError(f"step {self._awaiting.index} is still waiting for its probe")
        emb = self.embedder.embed(step.text)
        verdict = redundancy_score(emb, self.history, self.cfg.redundancy)
        self.history.append(emb)
        self.steps.append(step)
        if verdict.is_redundant:
            self.flagged.append(step.index)
            self._awaiting = step
            return ControllerAction.PROBE
        self.loop.observe_step(False)
        return ControllerAction.CONTINUE

    def on_probe(self, probe: ProbeResult) -> ControllerAction:
        if self._awaiting is None:
            raise RuntimeError("on_probe called without a flagged step")
        self._awaiting = None
        self.probes.append(probe)
        self.loop.record_probe(probe)

        verified = False
        vcfg = self.cfg.verification
        if probe.malformed:
            self.window = None
        else:
            if self.window is None:
                self.window = VerificationWindow()
            self.window.add(probe)
            if len(self.window) == vcfg.window_len:
                if exit_decision(self.window, vcfg, self.cfg.task):
                    verified = True
                    self.exit_probe = self.window.anchor
                elif self.cfg.slide_windows and vcfg.window_len > 1:
                    self.window = VerificationWindow(self.window.probes[1:])
                else:
                    self.window = None

        fire = self.loop.observe_step(True)
        if verified:
            return ControllerAction.EXIT_VERIFIED
        if fire:
            self.exit_probe = self.loop.best_probe
            return ControllerAction.EXIT_LOOP_BREAKER
        return ControllerAction.CONTINUE


def _holdback(text: str, delimiter: str) -> int:
    """Length of the longest suffix of ``text`` that could start ``delimiter``."""
    for k in range(min(len(delimiter) - 1, len(text)), 0, -1):
        if delimiter.startswith(text[-k:]):
            return k
    return 0


def run_episode(
    question: str,
    generator: GenerationBackend,
    embedder: EmbeddingBackend,
    cfg: ExitConfig | None = None,
    question_id: str = "",
) -> EpisodeResult:
    """Drive one controlled generation to completion."""
    cfg = cfg or ExitConfig()
    ctrl = EpisodeController(cfg, embedder)
    seg = IncrementalSegmenter(cfg.segmenter)
    vcfg = cfg.verification
    cap = vcfg.cap_for(cfg.task)
    delim = cfg.end_of_thinking

    text = ""
    fed = 0
    token_ends: list[int] = []
    seg_pos = 0
    steps: list[ReasoningStep] = []
    step_ends: list[int] = []
    probe_tokens = 0
    action: ControllerAction | None = None
    capped = False

    def partial(error: str) -> EpisodeResult:
        return _result(question_id, ExitKind.FULL, steps, step_ends, ctrl, len(token_ends), probe_tokens, 0, "", capped, error)

    def absorb(step: ReasoningStep) -> ReasoningStep:
        nonlocal seg_pos
        start, end = seg_pos, seg_pos + step.raw_len
        n_tok = bisect.bisect_right(token_ends, end) - bisect.bisect_right(token_ends, start)
        step = with_tokens(step, n_tok)
        seg_pos = end
        steps.append(step)
        step_ends.append(end)
        return step

    def process(batch: list[ReasoningStep]) -> ControllerAction | None:
        nonlocal probe_tokens, capped
        for i, raw in enumerate(batch):
            step = absorb(raw)
            act = ctrl.on_step(step)
            if act is ControllerAction.PROBE:
                prefix = text[: step_ends[-1] - len(step.separator)]
                completion = generator.probe(question, build_probe_prompt(prefix, cfg.task), cap)
                probe = probe_result(completion, cfg.task, step.index, vcfg)
                probe_tokens += probe.probe_tokens
                act = ctrl.on_probe(probe)
            if act in _EXITS:
                return act
            if len(steps) >= cfg.max_steps:
                capped = True
                return ControllerAction.EXIT_FULL
            if len(token_ends) + probe_tokens >= cfg.max_total_tokens:
                capped = True
                for rest in batch[i + 1 : i + 1 + cfg.max_steps - len(steps)]:
                    absorb(rest)
                return ControllerAction.EXIT_FULL
        return None

    stream = generator.stream(question)
    try:
        ended = False
        for event in stream:
            tail_from = max(0, len(text) - len(delim))
            text += event.text
            token_ends.append(len(text))
            cut = text.find(delim, tail_from) if delim else -1
            if event.is_end_of_thinking or cut >= 0:
                stop_at = cut if cut >= 0 else len(text)
                action = process(seg.feed(text[fed:stop_at], is_final=True))
                fed = stop_at
                ended = True
                break
            safe = len(text) - (_holdback(text, delim) if delim else 0)
            if safe > fed:
                action = process(seg.feed(text[fed:safe]))
                fed = safe
            if action is not None:
                break
            if len(token_ends) + probe_tokens >= cfg.max_total_tokens:
                capped = True
                action = ControllerAction.EXIT_FULL
                break
        if action is None and not ended:
            action = process(seg.feed(text[fed:], is_final=True))
            fed = len(text)
        if capped and not ended and len(steps) < cfg.max_steps:
            # a token-capped run still answers from everything it consumed
            for step in seg.feed(text[fed:], is_final=True)[: cfg.max_steps - len(steps)]:
                absorb(step)
            fed = len(text)
    except BackendError as exc:
        raise EpisodeError(str(exc), partial(str(exc))) from exc
    finally:
        stream.cancel()

    if action is ControllerAction.EXIT_VERIFIED or action is ControllerAction.EXIT_LOOP_BREAKER:
        kind = ExitKind.VERIFIED if action is ControllerAction.EXIT_VERIFIED else ExitKind.LOOP_BREAKER
        assert ctrl.exit_probe is not None
        return _result(
            question_id, kind, steps, step_ends, ctrl, len(token_ends), probe_tokens, 0,
            ctrl.exit_probe.answer, capped,
        )

    prefix = reconstruct(steps).rstrip()
    try:
        completion = generator.probe(question, build_probe_prompt(prefix, cfg.task), cap)
    except BackendError as exc:
        raise EpisodeError(str(exc), partial(str(exc))) from exc
    closing = probe_result(completion, cfg.task, len(steps), vcfg)
    return _result(
        question_id, ExitKind.FULL, steps, step_ends, ctrl, len(token_ends), probe_tokens,
        closing.probe_tokens, closing.answer, capped,
    )


def _result(
    question_id: str,
    kind: ExitKind,
    steps: list[ReasoningStep],
    step_ends: list[int],
    ctrl: EpisodeController,
    reasoning_tokens: int,
    probe_tokens: int,
    answer_tokens: int,
    final_answer: str,
    capped: bool,
    error: str | None = None,
) -> EpisodeResult:
    retained = sum(s.token_count for s in steps)
    return EpisodeResult(
        question_id=question_id,
        exit_kind=kind,
        stop_step=len(steps),
        steps_total_emitted=len(steps),
        reasoning_tokens=reasoning_tokens,
        probe_tokens=probe_tokens,
        answer_tokens=answer_tokens,
        total_tokens=reasoning_tokens + probe_tokens + answer_tokens,
        final_answer=final_answer,
        probes=list(ctrl.probes),
        retained_prefix=reconstruct(steps),
        retained_tokens=retained,
        lookahead_tokens=reasoning_tokens - retained,
        capped=capped,
        flagged_steps=list(ctrl.flagged),
        step_ends=list(step_ends),
        step_tokens=[s.token_count for s in steps],
        error=error,
    )


run = run_episode
