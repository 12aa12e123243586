"""Retroactive diagnostics over recorded full traces.

Everything here reads :class:`TraceRecord` objects that carry per-step trial
answers (and, for the confidence signal, trial confidences).  Step indices
are 1-based throughout.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from ..backends.traces import TraceRecord
from ..controller import EpisodeResult, ExitKind, token_reduction
from ..errors import DomainError, MissingFieldError
from ..verification import answers_match

logger = logging.getLogger(__name__)

__all__ = [
    "SignalKind",
    "GoldenStepReport",
    "TraceSplit",
    "SignalFailureReport",
    "SweepPoint",
    "FlaggedFraction",
    "golden_step",
    "overthinking_fractions",
    "confidence_trigger",
    "consistency_trigger",
    "confidence_signal_failures",
    "consistency_signal_failures",
    "counterfactual_exits",
    "premature_fraction",
    "threshold_sweep",
    "step_savings",
    "LAMBDA_GRID",
    "K_GRID",
]

LAMBDA_GRID = (0.93, 0.94, 0.95, 0.96, 0.97)
K_GRID = (1, 2, 3, 4, 5, 6, 7, 8)


class SignalKind(str, enum.Enum):
    CONFIDENCE = "Confidence"
    CONSISTENCY = "Consistency"
    CONTROLLER = "Controller"


class FlaggedFraction(float):
    """A fraction that remembers whether its denominator was zero."""

    undefined: bool

    def __new__(cls, value: float, undefined: bool = False) -> FlaggedFraction:
        obj = super().__new__(cls, value)
        obj.undefined = undefined
        return obj


def golden_step(trace: TraceRecord) -> int | None:
    """First step whose trial answer agrees with the trace's own final answer."""
    if not trace.has_trial_answers:
        raise MissingFieldError(f"trace {trace.id!r} has no per-step trial answers")
    for i, step in enumerate(trace.steps, 1):
        if step.trial_answer is not None and answers_match(step.trial_answer, trace.final_answer, trace.task):
            return i
    return None


@dataclass(frozen=True)
class TraceSplit:
    id: str
    golden: int | None
    n_steps: int
    pre_answer_tokens: int
    post_answer_tokens: int

    @property
    def position(self) -> float | None:
        return None if self.golden is None else self.golden / self.n_steps


@dataclass
class GoldenStepReport:
    traces: list[TraceSplit]
    post_answer_fraction: float
    cdf: list[tuple[float, float]]
    skipped_missing: int = 0
    no_golden: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "post_answer_fraction": self.post_answer_fraction,
            "n_traces": len(self.traces),
            "n_with_golden": sum(1 for t in self.traces if t.golden is not None),
            "no_golden": self.no_golden,
            "skipped_missing_trial_answers": self.skipped_missing,
            "cdf": [list(p) for p in self.cdf],
            "traces": [
                {
                    "id": t.id,
                    "golden_step": t.golden,
                    "n_steps": t.n_steps,
                    "pre_answer_tokens": t.pre_answer_tokens,
                    "post_answer_tokens": t.post_answer_tokens,
                }
                for t in self.traces
            ],
        }


def overthinking_fractions(traces: Iterable[TraceRecord]) -> GoldenStepReport:
    """Token split at the golden step, per trace and pooled over the corpus.

    Traces without a golden step keep all tokens as pre-answer and are left
    out of the pooled fraction and the CDF.
    """
    splits: list[TraceSplit] = []
    skipped = 0
    for tr in traces:
        try:
            g = golden_step(tr)
        except MissingFieldError as exc:
            logger.warning("%s", exc)
            skipped += 1
            continue
        total = tr.reasoning_tokens
        pre = total if g is None else sum(s.token_count for s in tr.steps[:g])
        splits.append(TraceSplit(tr.id, g, len(tr.steps), pre, total - pre))

    found = [s for s in splits if s.golden is not None]
    denom = sum(s.pre_answer_tokens + s.post_answer_tokens for s in found)
    frac = sum(s.post_answer_tokens for s in found) / denom if denom else 0.0
    positions = sorted(s.position for s in found)  # type: ignore[type-var]
    n = len(positions)
    cdf = [(p, (i + 1) / n) for i, p in enumerate(positions)]
    return GoldenStepReport(splits, frac, cdf, skipped, len(splits) - len(found))


def confidence_trigger(trace: TraceRecord, lam: float) -> int | None:
    """First step whose trial confidence strictly exceeds ``lam``."""
    for i, step in enumerate(trace.steps, 1):
        if step.trial_answer is not None and step.trial_confidence is not None and step.trial_confidence > lam:
            return i
    return None


def consistency_trigger(trace: TraceRecord, k: int) -> int | None:
    """Step that completes the first run of ``k`` agreeing consecutive trial answers."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    run = 0
    prev: str | None = None
    for i, step in enumerate(trace.steps, 1):
        ans = step.trial_answer
        if ans is None:
            run, prev = 0, None
            continue
        run = run + 1 if prev is not None and answers_match(ans, prev, trace.task) else 1
        prev = ans
        if run >= k:
            return i
    return None


@dataclass
class SignalFailureReport:
    signal: SignalKind
    parameter: float | None
    triggered_count: int
    failed_count: int
    failure_rate: float
    premature_count: int
    premature_fraction: float
    premature_undefined: bool = False
    triggers: dict[str, int] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    excluded_no_gold: int = 0
    skipped_missing: int = 0

    @property
    def non_recoverable_count(self) -> int:
        return self.failed_count - self.premature_count

    def to_dict(self) -> dict[str, Any]:
        return {
            "signal": self.signal.value,
            "parameter": self.parameter,
            "triggered_count": self.triggered_count,
            "failed_count": self.failed_count,
            "failure_rate": self.failure_rate,
            "premature_count": self.premature_count,
            "non_recoverable_count": self.non_recoverable_count,
            "premature_fraction": self.premature_fraction,
            "premature_undefined": self.premature_undefined,
            "excluded_no_gold": self.excluded_no_gold,
            "skipped_missing_trial_answers": self.skipped_missing,
            "triggers": dict(self.triggers),
            "failures": list(self.failures),
        }


def premature_fraction(failures: Iterable[str], traces: Iterable[TraceRecord] | Mapping[str, TraceRecord]) -> FlaggedFraction:
    """Share of failed exits whose full chain would have ended correct.

    With no failures the result is 0 and flagged ``undefined``.
    """
    by_id = traces if isinstance(traces, Mapping) else {t.id: t for t in traces}
    failed = list(failures)
    if not failed:
        return FlaggedFraction(0.0, True)
    hits = 0
    for fid in failed:
        tr = by_id[fid]
        if tr.gold_answer is None:
            raise MissingFieldError(f"trace {fid!r} has no gold answer")
        hits += answers_match(tr.final_answer, tr.gold_answer, tr.task)
    return FlaggedFraction(hits / len(failed))


def _report(
    signal: SignalKind,
    parameter: float | None,
    triggers: dict[str, int],
    answers: dict[str, str],
    traces: list[TraceRecord],
    excluded: int,
    skipped: int,
) -> SignalFailureReport:
    by_id = {t.id: t for t in traces}
    failures = [
        tid for tid in triggers if not answers_match(answers[tid], by_id[tid].gold_answer or "", by_id[tid].task)
    ]
    n = len(triggers)
    prem = premature_fraction(failures, by_id)
    n_prem = sum(answers_match(by_id[f].final_answer, by_id[f].gold_answer or "", by_id[f].task) for f in failures)
    return SignalFailureReport(
        signal=signal,
        parameter=parameter,
        triggered_count=n,
        failed_count=len(failures),
        failure_rate=len(failures) / n if n else 0.0,
        premature_count=n_prem,
        premature_fraction=float(prem),
        premature_undefined=prem.undefined,
        triggers=triggers,
        failures=failures,
        excluded_no_gold=excluded,
        skipped_missing=skipped,
    )


def _signal(traces: Iterable[TraceRecord], signal: SignalKind, parameter: float) -> SignalFailureReport:
    kept: list[TraceRecord] = []
    triggers: dict[str, int] = {}
    answers: dict[str, str] = {}
    excluded = skipped = 0
    for tr in traces:
        if not tr.has_trial_answers:
            skipped += 1
            logger.warning("trace %r has no per-step trial answers; skipped", tr.id)
            continue
        if tr.gold_answer is None:
            excluded += 1
            continue
        kept.append(tr)
        if signal is SignalKind.CONFIDENCE:
            t = confidence_trigger(tr, parameter)
        else:
            t = consistency_trigger(tr, int(parameter))
        if t is not None:
            triggers[tr.id] = t
            answers[tr.id] = tr.steps[t - 1].trial_answer  # type: ignore[assignment]
    return _report(signal, parameter, triggers, answers, kept, excluded, skipped)


def confidence_signal_failures(traces: Iterable[TraceRecord], lam: float = 0.95) -> SignalFailureReport:
    return _signal(traces, SignalKind.CONFIDENCE, lam)


def consistency_signal_failures(traces: Iterable[TraceRecord], k: int = 3) -> SignalFailureReport:
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    return _signal(traces, SignalKind.CONSISTENCY, k)


def counterfactual_exits(episodes: Iterable[EpisodeResult], traces: Iterable[TraceRecord]) -> SignalFailureReport:
    """Failure accounting for the controller's own early exits.

    An early exit (verified or loop breaker) fails when its answer misses the
    gold answer; it is premature when the paired full trace ends correct.
    """
    by_id = {t.id: t for t in traces}
    kept: list[TraceRecord] = []
    triggers: dict[str, int] = {}
    answers: dict[str, str] = {}
    excluded = 0
    for ep in episodes:
        tr = by_id.get(ep.question_id)
        if tr is None:
            raise MissingFieldError(f"episode {ep.question_id!r} has no matching trace")
        if tr.gold_answer is None:
            excluded += 1
            continue
        kept.append(tr)
        if ep.exit_kind is not ExitKind.FULL:
            triggers[tr.id] = ep.stop_step
            answers[tr.id] = ep.final_answer
    return _report(SignalKind.CONTROLLER, None, triggers, answers, kept, excluded, 0)


@dataclass(frozen=True)
class SweepPoint:
    parameter: float | None
    failure_rate: float
    token_reduction: float
    triggered_count: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "parameter": self.parameter,
            "failure_rate": self.failure_rate,
            "token_reduction": self.token_reduction,
            "triggered_count": self.triggered_count,
        }


def threshold_sweep(
    traces: Sequence[TraceRecord],
    grid: Sequence[float],
    signal: SignalKind | str = SignalKind.CONFIDENCE,
) -> list[SweepPoint]:
    """One point per grid value.

    Token reduction counts retained reasoning tokens only: a triggered trace
    keeps steps through its trigger, an untriggered one keeps everything.
    Probe cost is not modelled here.
    """
    signal = SignalKind(signal)
    traces = list(traces)
    full = sum(t.reasoning_tokens for t in traces)
    points = []
    for value in grid:
        if signal is SignalKind.CONFIDENCE:
            rep = confidence_signal_failures(traces, value)
            trig = {t.id: confidence_trigger(t, value) for t in traces if t.has_trial_answers}
        else:
            rep = consistency_signal_failures(traces, int(value))
            trig = {t.id: consistency_trigger(t, int(value)) for t in traces if t.has_trial_answers}
        used = 0
        for t in traces:
            stop = trig.get(t.id)
            used += t.reasoning_tokens if stop is None else sum(s.token_count for s in t.steps[:stop])
        tr = token_reduction(used, full) if full else 0.0
        points.append(SweepPoint(value, rep.failure_rate, tr, rep.triggered_count))
    return points


def step_savings(pairs: Iterable[tuple[int, int]]) -> float:
    """Mean percentage of steps removed, ``(orig - stopped) / orig``, over pairs."""
    vals = []
    for orig, stopped in pairs:
        if orig <= 0:
            raise DomainError(f"original step count must be positive, got {orig}")
        vals.append((orig - stopped) / orig * 100.0)
    if not vals:
        raise DomainError("step_savings needs at least one pair")
    return sum(vals) / len(vals)
