"""Split reasoning text into coherent steps.

The chain is first cut at blank lines, each paragraph gets a coarse role from
string cues, and adjacent paragraphs are then grouped so that steps land in a
target character range.  Every step keeps the whitespace that followed it, so
``"".join(s.leading + s.text + s.separator for s in steps)`` gives back the
source text byte for byte.

Two entry points share the exact same rules: :func:`segment` for a finished
text and :class:`IncrementalSegmenter` for a stream.  The streaming variant
only emits a step once no amount of further text could change it.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .errors import ConfigurationError

__all__ = [
    "StepRole",
    "RawSegment",
    "ReasoningStep",
    "SegmenterConfig",
    "split_paragraphs",
    "assign_role",
    "is_enumerated",
    "merge_segments",
    "segment",
    "feed_incremental",
    "IncrementalSegmenter",
    "reconstruct",
    "approx_tokens",
    "BLANK_LINE",
]

# >= 2 newlines with only spaces/tabs between them.
BLANK_LINE = re.compile(r"\n(?:[ \t]*\n)+")
_BOUNDARY = BLANK_LINE
_ENUMERATED = re.compile(r"^\s*(?:\d+\.(?:\s|$)|[-*]\s|step\s*\d+)", re.IGNORECASE)

_SELF_CORRECTION = re.compile(r"^(?:wait|hmm+|actually)\b|^no,\s")
_VERIFICATION_PREFIX = re.compile(r"^(?:let me (?:verify|check)|double[- ]check|to confirm)\b")
_VERIFICATION_ANYWHERE = ("let me verify", "let me check", "double-check")
_CONCLUSION_PREFIX = re.compile(r"^(?:therefore|thus)\b")
_CONCLUSION_ANYWHERE = ("so the answer", "final answer")
_SETUP_PREFIX = re.compile(r"^(?:we are given|the problem)\b")
_DISPLAY_MATH = ("$$", "\\[", "\\begin{equation", "\\begin{align")
_CALC_CHARS = frozenset("0123456789+-*/=^<>()[]{}|\\")
_CALC_RATIO = 0.30
_LEAD_NOISE = " \t*#>_"


class StepRole(str, enum.Enum):
    PROBLEM_SETUP = "ProblemSetup"
    CALCULATION = "Calculation"
    SELF_CORRECTION = "SelfCorrection"
    VERIFICATION = "Verification"
    CONCLUSION = "Conclusion"
    GENERAL = "General"


_MAJOR = frozenset({StepRole.SELF_CORRECTION, StepRole.CONCLUSION})


@dataclass(frozen=True)
class SegmenterConfig:
    l_min: int = 200
    l_max: int = 1000

    def __post_init__(self) -> None:
        if not (0 < self.l_min < self.l_max):
            raise ConfigurationError(
                f"segmenter needs 0 < l_min < l_max, got l_min={self.l_min} l_max={self.l_max}"
            )


@dataclass(frozen=True)
class RawSegment:
    """One blank-line-delimited paragraph.

    ``separator`` is the whitespace run that followed the paragraph in the
    source; ``leading`` is only ever non-empty on the very first paragraph of
    a text that opens with blank lines.
    """

    text: str
    char_len: int
    ordinal: int
    separator: str = ""
    leading: str = ""


@dataclass(frozen=True)
class ReasoningStep:
    text: str
    role: StepRole
    char_len: int
    token_count: int
    index: int
    separator: str = ""
    leading: str = ""
    paragraphs: int = 1

    @property
    def raw(self) -> str:
        """The exact source span covered by this step."""
        return self.leading + self.text + self.separator

    @property
    def raw_len(self) -> int:
        return len(self.leading) + len(self.text) + len(self.separator)


def approx_tokens(char_len: int) -> int:
    """Offline token estimate: one token per four characters, rounded up."""
    return math.ceil(char_len / 4)


def reconstruct(steps: Iterable[ReasoningStep]) -> str:
    return "".join(s.raw for s in steps)


def split_paragraphs(text: str, start_ordinal: int = 0) -> list[RawSegment]:
    pieces: list[list[str]] = []  # [body, separator]
    pos = 0
    for m in _BOUNDARY.finditer(text):
        pieces.append([text[pos : m.start()], m.group()])
        pos = m.end()
    pieces.append([text[pos:], ""])

    leading = ""
    if pieces and not pieces[0][0].strip():
        # text opens with blank lines (or is blank altogether)
        leading = pieces[0][0] + pieces[0][1]
        pieces = pieces[1:]
    if len(pieces) >= 2 and not pieces[-1][0].strip():
        tail = pieces.pop()
        pieces[-1][1] += tail[0] + tail[1]
    if not any(body.strip() for body, _ in pieces):
        return []

    out = []
    for i, (body, sep) in enumerate(pieces):
        out.append(
            RawSegment(
                text=body,
                char_len=len(body),
                ordinal=start_ordinal + i,
                separator=sep,
                leading=leading if i == 0 else "",
            )
        )
    return out


def is_enumerated(text: str) -> bool:
    return _ENUMERATED.match(text) is not None


def _calc_heavy(text: str) -> bool:
    if any(d in text for d in _DISPLAY_MATH):
        return True
    chars = [c for c in text if not c.isspace()]
    if not chars:
        return False
    hits = sum(1 for c in chars if c in _CALC_CHARS)
    return hits / len(chars) >= _CALC_RATIO


def assign_role(segment: RawSegment) -> StepRole:
    """Map a paragraph to a role with a fixed, case-insensitive cue table.

    Precedence: self-correction, verification, conclusion, problem setup,
    calculation, general.
    """
    head = segment.text.lower().lstrip(_LEAD_NOISE)
    lowered = segment.text.lower()
    if _SELF_CORRECTION.match(head):
        return StepRole.SELF_CORRECTION
    if _VERIFICATION_PREFIX.match(head) or any(c in lowered for c in _VERIFICATION_ANYWHERE):
        return StepRole.VERIFICATION
    if _CONCLUSION_PREFIX.match(head) or any(c in lowered for c in _CONCLUSION_ANYWHERE):
        return StepRole.CONCLUSION
    if segment.ordinal == 0 or _SETUP_PREFIX.match(head):
        return StepRole.PROBLEM_SETUP
    if _calc_heavy(segment.text):
        return StepRole.CALCULATION
    return StepRole.GENERAL


def compatible(a: StepRole, b: StepRole) -> bool:
    return a == b or a is StepRole.GENERAL or b is StepRole.GENERAL


@dataclass
class _Group:
    members: list[RawSegment] = field(default_factory=list)
    role: StepRole = StepRole.GENERAL
    length: int = 0

    @classmethod
    def start(cls, seg: RawSegment, role: StepRole) -> _Group:
        return cls([seg], role, seg.char_len)

    @property
    def first(self) -> RawSegment:
        return self.members[0]

    @property
    def last(self) -> RawSegment:
        return self.members[-1]

    def joined_len(self, other_len: int) -> int:
        return self.length + len(self.last.separator) + other_len

    def add(self, seg: RawSegment, role: StepRole) -> None:
        self.length = self.joined_len(seg.char_len)
        self.members.append(seg)
        if self.role is StepRole.GENERAL:
            self.role = role

    def absorb(self, other: _Group) -> None:
        self.length = self.joined_len(other.length)
        self.members.extend(other.members)
        if self.role is StepRole.GENERAL:
            self.role = other.role

    def raw_len(self) -> int:
        return sum(len(m.leading) + m.char_len + len(m.separator) for m in self.members)

    def to_step(self, index: int) -> ReasoningStep:
        parts = []
        for m in self.members[:-1]:
            parts.append(m.text)
            parts.append(m.separator)
        parts.append(self.last.text)
        text = "".join(parts)
        return ReasoningStep(
            text=text,
            role=self.role,
            char_len=len(text),
            token_count=approx_tokens(len(text)),
            index=index,
            separator=self.last.separator,
            leading=self.first.leading,
            paragraphs=len(self.members),
        )


def _can_merge(group: _Group, seg: RawSegment, role: StepRole, cfg: SegmenterConfig) -> bool:
    if is_enumerated(seg.text):
        return False
    if role in _MAJOR and role != group.role:
        return False
    if group.joined_len(seg.char_len) > cfg.l_max:
        return False
    if group.length < cfg.l_min:
        return True
    return seg.char_len < cfg.l_min and compatible(group.role, role)


def _greedy(pairs: Iterable[tuple[RawSegment, StepRole]], cfg: SegmenterConfig) -> list[_Group]:
    groups: list[_Group] = []
    for seg, role in pairs:
        if groups and _can_merge(groups[-1], seg, role, cfg):
            groups[-1].add(seg, role)
        else:
            groups.append(_Group.start(seg, role))
    return groups


def _merge_tail(groups: list[_Group], cfg: SegmenterConfig) -> None:
    if len(groups) < 2:
        return
    prev, last = groups[-2], groups[-1]
    if (
        last.length < cfg.l_min
        and not is_enumerated(last.first.text)
        and prev.joined_len(last.length) <= cfg.l_max
    ):
        prev.absorb(last)
        groups.pop()


def merge_segments(
    segments: Sequence[tuple[RawSegment, StepRole]],
    cfg: SegmenterConfig | None = None,
    start_index: int = 1,
) -> list[ReasoningStep]:
    """Group paragraphs into steps.

    Enumerated paragraphs and entries into self-correction or conclusion
    always open a new step.  Otherwise a step below ``l_min`` keeps absorbing
    the next paragraph, and a step already in range absorbs a short paragraph
    of compatible role, as long as the result stays within ``l_max``.  A short
    final step is folded into its predecessor when it fits.
    """
    cfg = cfg or SegmenterConfig()
    groups = _greedy(segments, cfg)
    _merge_tail(groups, cfg)
    return [g.to_step(start_index + i) for i, g in enumerate(groups)]


def segment(text: str, cfg: SegmenterConfig | None = None) -> list[ReasoningStep]:
    cfg = cfg or SegmenterConfig()
    segs = split_paragraphs(text)
    return merge_segments([(s, assign_role(s)) for s in segs], cfg)


class IncrementalSegmenter:
    """Streaming front end that agrees exactly with :func:`segment`.

    Feed text as it arrives; each call returns the steps whose boundaries are
    now certain.  Whatever is not yet certain stays in :attr:`retained`.
    One instance per stream.
    """

    def __init__(self, cfg: SegmenterConfig | None = None) -> None:
        self.cfg = cfg or SegmenterConfig()
        self._pending = ""
        self._ordinal = 0
        self._next_index = 1
        self._closed = False

    @property
    def retained(self) -> str:
        return self._pending

    @property
    def steps_emitted(self) -> int:
        return self._next_index - 1

    def feed(self, text: str, is_final: bool = False) -> list[ReasoningStep]:
        if self._closed:
            if text:
                raise RuntimeError("segmenter already finalized")
            return []
        self._pending += text
        segs = split_paragraphs(self._pending, self._ordinal)
        if is_final:
            self._closed = True
            steps = merge_segments([(s, assign_role(s)) for s in segs], self.cfg, self._next_index)
            if steps:
                self._pending = ""
                self._next_index += len(steps)
            return steps
        if len(segs) < 2:
            return []

        # Everything but the last paragraph is complete (body and separator).
        partial = segs[-1]
        partial_len = len(partial.text.rstrip())
        groups = _greedy(((s, assign_role(s)) for s in segs[:-1]), self.cfg)
        count = self._certain_prefix(groups, partial_len)
        if not count:
            return []

        out = [g.to_step(self._next_index + i) for i, g in enumerate(groups[:count])]
        consumed = sum(g.raw_len() for g in groups[:count])
        self._pending = self._pending[consumed:]
        self._ordinal += sum(len(g.members) for g in groups[:count])
        self._next_index += count
        return out

    def _certain_prefix(self, groups: list[_Group], partial_len: int) -> int:
        cfg = self.cfg
        n = len(groups)

        def apart(g: _Group, nxt_len: int) -> bool:
            # nxt_len is a lower bound on the next paragraph's final length
            return g.joined_len(nxt_len) > cfg.l_max or (
                g.length >= cfg.l_min and nxt_len >= cfg.l_min
            )

        closed = [i < n - 1 for i in range(n)]
        closed[-1] = apart(groups[-1], partial_len)

        count = 0
        for i in range(n):
            if not closed[i]:
                break
            g = groups[i]
            if i + 1 < n:
                nxt = groups[i + 1]
                safe = (
                    closed[i + 1]
                    or is_enumerated(nxt.first.text)
                    or nxt.length >= cfg.l_min
                    or g.joined_len(nxt.length) > cfg.l_max
                )
            else:
                # the next group is the paragraph still being written
                safe = partial_len >= cfg.l_min or g.joined_len(partial_len) > cfg.l_max
            if not safe:
                break
            count += 1
        return count


def feed_incremental(
    segmenter: IncrementalSegmenter, text: str, is_final: bool = False
) -> tuple[list[ReasoningStep], str]:
    """Functional wrapper: feed ``text`` and return ``(emitted, retained)``."""
    emitted = segmenter.feed(text, is_final)
    return emitted, segmenter.retained


def with_tokens(step: ReasoningStep, token_count: int) -> ReasoningStep:
    return replace(step, token_count=token_count)
