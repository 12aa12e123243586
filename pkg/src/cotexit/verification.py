"""Trial-answer probing, confidence, and the verified-exit predicate."""

from __future__ import annotations

import difflib
import enum
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, DomainError, ProbeMalformed

if TYPE_CHECKING:
    from .backends.base import ProbeCompletion

__all__ = [
    "TaskKind",
    "PROBE_SUFFIXES",
    "ProbeResult",
    "VerificationConfig",
    "VerificationWindow",
    "build_probe_prompt",
    "extract_boxed_answer",
    "answer_span",
    "answer_confidence",
    "mc_confidence",
    "answers_match",
    "exit_decision",
    "probe_result",
]


class TaskKind(str, enum.Enum):
    MATH = "math"
    MULTIPLE_CHOICE = "mc"
    CODE = "code"

    @classmethod
    def parse(cls, value: str | TaskKind) -> TaskKind:
        if isinstance(value, TaskKind):
            return value
        aliases = {"multiplechoice": "mc", "multiple_choice": "mc", "gpqa": "mc"}
        v = str(value).strip().lower()
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise ConfigurationError(f"unknown task kind {value!r}; expected math, mc or code") from None


# Math/MC keep the think block open; code closes it to enter solution mode.
PROBE_SUFFIXES: dict[TaskKind, str] = {
    TaskKind.MATH: "\n**Final Answer**\n\nThe final answer is \\boxed{",
    TaskKind.MULTIPLE_CHOICE: "\n**Final Answer**\n\nThe answer choice is \\boxed{",
    TaskKind.CODE: "</think>\n\n### Solution Code\n```python\n",
}

_DEFAULT_CAPS = {TaskKind.MATH: 30, TaskKind.MULTIPLE_CHOICE: 30, TaskKind.CODE: 50}


@dataclass(frozen=True)
class VerificationConfig:
    lam: float = 0.98
    epsilon: float = 0.03
    window_len: int = 2
    probe_token_cap: int | None = None
    mc_temperature: float = 1.0
    code_match_threshold: float = 0.8
    mc_choices: tuple[str, ...] = ("A", "B", "C", "D")

    def __post_init__(self) -> None:
        # lam may exceed 1 on purpose: that switches verified exits off.
        if not (0.0 < self.lam):
            raise ConfigurationError(f"lambda must be > 0, got {self.lam}")
        if self.epsilon < 0:
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.window_len < 1:
            raise ConfigurationError(f"L must be >= 1, got {self.window_len}")
        if self.probe_token_cap is not None and self.probe_token_cap < 1:
            raise ConfigurationError(f"probe_token_cap must be >= 1, got {self.probe_token_cap}")
        if self.mc_temperature <= 0:
            raise ConfigurationError(f"mc_temperature must be > 0, got {self.mc_temperature}")

    def cap_for(self, task: TaskKind) -> int:
        return self.probe_token_cap or _DEFAULT_CAPS[task]


@dataclass(frozen=True)
class ProbeResult:
    step_index: int
    answer: str
    confidence: float
    probe_tokens: int
    raw_token_logprobs: tuple[float, ...] = ()
    malformed: bool = False

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "answer": self.answer,
            "confidence": self.confidence,
            "probe_tokens": self.probe_tokens,
            "raw_token_logprobs": list(self.raw_token_logprobs),
            "malformed": self.malformed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ProbeResult:
        return cls(
            step_index=int(d["step_index"]),
            answer=d["answer"],
            confidence=float(d["confidence"]),
            probe_tokens=int(d["probe_tokens"]),
            raw_token_logprobs=tuple(float(x) for x in d.get("raw_token_logprobs", ())),
            malformed=bool(d.get("malformed", False)),
        )


@dataclass
class VerificationWindow:
    probes: list[ProbeResult] = field(default_factory=list)

    def add(self, probe: ProbeResult) -> None:
        if self.probes and probe.step_index <= self.probes[-1].step_index:
            raise ContractViolation(
                f"window probes must advance: {probe.step_index} after {self.probes[-1].step_index}"
            )
        self.probes.append(probe)

    @property
    def anchor(self) -> ProbeResult:
        return self.probes[0]

    def __len__(self) -> int:
        return len(self.probes)


def build_probe_prompt(prefix: str, task: TaskKind) -> str:
    return prefix + PROBE_SUFFIXES[TaskKind.parse(task)]


def _close_index(text: str) -> int:
    """Index of the brace closing an already-open ``\\boxed{``, or -1."""
    depth = 1
    for i, ch in enumerate(text):
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i
    return -1


def extract_boxed_answer(generated: str) -> str:
    """Contents of the box the probe suffix opened.

    >>> extract_boxed_answer("\\\\frac{1}{2}} and so")
    '\\\\frac{1}{2}'
    """
    end = _close_index(generated)
    if end < 0:
        raise ProbeMalformed(f"no closing brace in probe output {generated[:60]!r}")
    return generated[:end]


def answer_span(tokens: Sequence[str], logprobs: Sequence[float]) -> tuple[str, list[float], int]:
    """Locate the boxed answer at token granularity.

    Returns ``(answer, span_logprobs, first_span_token)``.  A token belongs to
    the span when it contributes at least one answer character; the closing
    brace itself contributes nothing.
    """
    text = "".join(tokens)
    end = _close_index(text)
    if end < 0:
        raise ProbeMalformed(f"no closing brace within {len(tokens)} probe tokens")
    answer = text[:end]
    if not answer.strip():
        raise ProbeMalformed("empty boxed answer")
    span: list[float] = []
    first = -1
    pos = 0
    for i, (tok, lp) in enumerate(zip(tokens, logprobs)):
        if pos >= end:
            break
        if tok and pos < end:
            span.append(float(lp))
            if first < 0:
                first = i
        pos += len(tok)
    return answer, span, first


def answer_confidence(answer_span_logprobs: Sequence[float]) -> float:
    """Geometric mean of token probabilities, ``exp(mean(logprobs))``."""
    if len(answer_span_logprobs) == 0:
        raise DomainError("confidence of an empty answer span is undefined")
    lps = np.asarray(answer_span_logprobs, dtype=np.float64)
    if np.any(lps > 0) or not np.all(np.isfinite(lps)):
        raise DomainError("log-probabilities must be finite and <= 0")
    return float(math.exp(lps.mean()))


def mc_confidence(choice_logprobs: Mapping[str, float], picked: str, temperature: float = 1.0) -> float:
    """Temperature-scaled softmax over the answer choices only."""
    if picked not in choice_logprobs:
        raise DomainError(f"picked choice {picked!r} not among {sorted(choice_logprobs)}")
    if temperature <= 0:
        raise DomainError(f"temperature must be > 0, got {temperature}")
    keys = list(choice_logprobs)
    z = np.array([choice_logprobs[k] for k in keys], dtype=np.float64) / temperature
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    return float(p[keys.index(picked)])


def answers_match(a: str, b: str, task: TaskKind = TaskKind.MATH, cfg: VerificationConfig | None = None) -> bool:
    task = TaskKind.parse(task)
    if task is TaskKind.CODE:
        cfg = cfg or VerificationConfig()
        return difflib.SequenceMatcher(None, a, b).ratio() >= cfg.code_match_threshold
    return a.strip() == b.strip()


def exit_decision(
    window: VerificationWindow | Sequence[ProbeResult],
    cfg: VerificationConfig | None = None,
    task: TaskKind = TaskKind.MATH,
) -> bool:
    """Confident anchor, consistent answers, no confidence drop beyond epsilon."""
    cfg = cfg or VerificationConfig()
    probes = window.probes if isinstance(window, VerificationWindow) else list(window)
    if len(probes) != cfg.window_len:
        raise ContractViolation(f"window holds {len(probes)} probes, expected L={cfg.window_len}")
    if any(p.malformed for p in probes):
        return False
    anchor = probes[0]
    if not anchor.confidence > cfg.lam:
        return False
    rest = probes[1:]
    if not all(answers_match(p.answer, anchor.answer, task, cfg) for p in rest):
        return False
    return all(p.confidence >= anchor.confidence - cfg.epsilon for p in rest)


def _norm_choice(tok: str) -> str:
    return tok.strip().strip("(){}.").upper()


def probe_result(
    completion: ProbeCompletion,
    task: TaskKind,
    step_index: int,
    cfg: VerificationConfig | None = None,
) -> ProbeResult:
    """Turn a raw probe continuation into a :class:`ProbeResult`.

    Malformed output does not raise; it yields a result flagged ``malformed``
    with zero confidence so it can never pass verification.
    """
    cfg = cfg or VerificationConfig()
    task = TaskKind.parse(task)
    tokens = list(completion.tokens)
    lps = [float(x) for x in completion.logprobs]
    n = completion.n_tokens
    if task is TaskKind.CODE:
        if not lps:
            return ProbeResult(step_index, "", 0.0, n, (), malformed=True)
        return ProbeResult(step_index, "".join(tokens), answer_confidence(lps), n, tuple(lps))
    try:
        answer, span, first = answer_span(tokens, lps)
    except ProbeMalformed:
        return ProbeResult(step_index, "", 0.0, n, tuple(lps), malformed=True)

    if task is TaskKind.MULTIPLE_CHOICE:
        top = completion.top_logprobs[first] if completion.top_logprobs and first < len(completion.top_logprobs) else None
        picked = _norm_choice(answer)
        if top and picked in cfg.mc_choices:
            choices = {c: -math.inf for c in cfg.mc_choices}
            for tok, lp in top.items():
                c = _norm_choice(tok)
                if c in choices:
                    choices[c] = max(choices[c], float(lp))
            if choices[picked] == -math.inf:
                choices[picked] = span[0]
            conf = mc_confidence(choices, picked, cfg.mc_temperature)
            return ProbeResult(step_index, answer, conf, n, tuple(span))
    return ProbeResult(step_index, answer, answer_confidence(span), n, tuple(span))
