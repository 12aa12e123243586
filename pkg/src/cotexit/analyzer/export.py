"""Training-data export from controller episodes paired with their full traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from ..backends.traces import TraceRecord
from ..controller import EpisodeResult, ExitKind
from ..errors import DomainError, MissingFieldError
from ..segmenter import SegmenterConfig, segment
from ..verification import answers_match

__all__ = [
    "ExportRow",
    "LabeledEpisode",
    "label_episodes",
    "export_sft",
    "export_dpo",
    "export_grpo",
    "grpo_reward",
    "rank_bonuses",
    "RANK_BONUSES",
    "GRPO_MAX_LEN",
]

RANK_BONUSES = (0.5, 0.25, 0.0, -0.25)
GRPO_MAX_LEN = 4096
GROUP_SIZE = 4


@dataclass(frozen=True)
class ExportRow:
    kind: str  # SFT | DPO | GRPO
    id: str
    question: str
    payload: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "id": self.id, "question": self.question, **self.payload}


@dataclass(frozen=True)
class LabeledEpisode:
    episode: EpisodeResult
    trace: TraceRecord
    correct: bool
    full_correct: bool
    full_steps: int


def label_episodes(
    episodes: Iterable[EpisodeResult],
    traces: Iterable[TraceRecord],
    seg_cfg: SegmenterConfig | None = None,
) -> list[LabeledEpisode]:
    """Pair episodes with traces by id and grade both against the gold answer.

    ``full_steps`` counts the full trace in the same segmented steps the
    controller saw, so ``stop_step / full_steps`` compares like with like.
    """
    by_id = {t.id: t for t in traces}
    out = []
    for ep in episodes:
        tr = by_id.get(ep.question_id)
        if tr is None:
            raise MissingFieldError(f"episode {ep.question_id!r} has no matching trace")
        if tr.gold_answer is None:
            raise MissingFieldError(f"trace {tr.id!r} has no gold answer")
        full_steps = len(segment(tr.reasoning_text, seg_cfg))
        out.append(
            LabeledEpisode(
                ep,
                tr,
                answers_match(ep.final_answer, tr.gold_answer, tr.task),
                answers_match(tr.final_answer, tr.gold_answer, tr.task),
                full_steps,
            )
        )
    return out


def export_sft(labeled: Iterable[LabeledEpisode], ratio_cap: float = 0.6) -> list[ExportRow]:
    rows = []
    for item in labeled:
        ep = item.episode
        if ep.exit_kind is not ExitKind.VERIFIED or not item.correct:
            continue
        ratio = ep.stop_step / item.full_steps
        if not ratio < ratio_cap:
            continue
        rows.append(
            ExportRow(
                "SFT",
                ep.question_id,
                item.trace.question,
                {
                    "chain": ep.retained_prefix.rstrip(),
                    "answer": ep.final_answer,
                    "stop_step": ep.stop_step,
                    "full_steps": item.full_steps,
                    "ratio": ratio,
                },
            )
        )
    return rows


def export_dpo(labeled: Iterable[LabeledEpisode]) -> list[ExportRow]:
    """Truncated chain preferred over the full chain when both are correct."""
    rows = []
    for item in labeled:
        ep = item.episode
        # a full-reasoning episode has nothing shorter to prefer
        if ep.exit_kind is ExitKind.FULL or not (item.correct and item.full_correct):
            continue
        rows.append(
            ExportRow(
                "DPO",
                ep.question_id,
                item.trace.question,
                {
                    "chosen_chain": ep.retained_prefix.rstrip(),
                    "chosen_answer": ep.final_answer,
                    "rejected_chain": item.trace.reasoning_text,
                    "rejected_answer": item.trace.final_answer,
                },
            )
        )
    return rows


def export_grpo(
    episodes: Iterable[EpisodeResult],
    traces: Iterable[TraceRecord],
    closing_tag: str = "</think>",
) -> list[ExportRow]:
    """One row per flagged step inside the retained prefix of each episode."""
    by_id = {t.id: t for t in traces}
    rows = []
    for ep in episodes:
        tr = by_id.get(ep.question_id)
        if tr is None:
            raise MissingFieldError(f"episode {ep.question_id!r} has no matching trace")
        for step in ep.flagged_steps:
            if step > len(ep.step_ends):
                continue
            prefix = ep.prefix_at(step)
            rows.append(
                ExportRow(
                    "GRPO",
                    f"{ep.question_id}@{step}",
                    tr.question,
                    {
                        "prompt": f"{tr.question}\n{prefix}\n{closing_tag}",
                        "prefix": prefix,
                        "flagged_step": step,
                        "solution": tr.gold_answer,
                    },
                )
            )
    return rows


def grpo_reward(correct: bool, length_tokens: int, rank_bonus: float) -> float:
    """Correctness with a length bonus, plus the within-group rank bonus.

    Completions longer than the 4096-token budget get a negative length term.
    """
    if length_tokens < 0:
        raise DomainError(f"length_tokens must be >= 0, got {length_tokens}")
    if rank_bonus not in RANK_BONUSES:
        raise DomainError(f"rank_bonus must be one of {RANK_BONUSES}, got {rank_bonus}")
    r_correct = 1.0 if correct else 0.0
    return r_correct * (1.0 + 0.5 * (1.0 - length_tokens / GRPO_MAX_LEN)) + rank_bonus


def rank_bonuses(group: Sequence[tuple[bool, int]]) -> list[float]:
    """Shortest correct rollout gets +0.5, then +0.25, 0, -0.25; incorrect ones get -0.25.

    Equal lengths keep group order.
    """
    if len(group) != GROUP_SIZE:
        raise DomainError(f"rank groups hold exactly {GROUP_SIZE} rollouts, got {len(group)}")
    out = [RANK_BONUSES[-1]] * GROUP_SIZE
    ranked = sorted((length, pos) for pos, (ok, length) in enumerate(group) if ok)
    for rank, (_, pos) in enumerate(ranked):
        out[pos] = RANK_BONUSES[rank]
    return out
