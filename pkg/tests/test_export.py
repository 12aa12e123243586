import itertools
import random

import pytest

import oracles
from cotexit.analyzer import (
    LabeledEpisode,
    export_dpo,
    export_grpo,
    export_sft,
    grpo_reward,
    label_episodes,
    rank_bonuses,
)
from cotexit.backends import ReplayBackend
from cotexit.controller import EpisodeResult, ExitConfig, ExitKind, run_episode
from cotexit.errors import DomainError, MissingFieldError
from episodes import flagged_trace


def _labeled(kind, correct, stop, full, full_correct=True, qid="e"):
    trace, _ = flagged_trace([0] * max(full, 1), qid=qid, gold="5")
    ep = EpisodeResult(qid, kind, stop, stop, 1, 0, 0, 1, "5" if correct else "4", [], "chain\n\n")
    return LabeledEpisode(ep, trace, correct, full_correct, full)


# -- reward


def test_grpo_reward_examples():
    assert grpo_reward(True, 4096, 0.0) == 1.0
    assert grpo_reward(False, 999, -0.25) == -0.25
    assert grpo_reward(True, 0, 0.5) == 2.0
    assert grpo_reward(True, 8192, 0.0) == 0.5  # over budget: the length term turns negative


def test_grpo_reward_domain():
    with pytest.raises(DomainError):
        grpo_reward(True, 10, 0.3)
    with pytest.raises(DomainError):
        grpo_reward(True, -1, 0.0)


def test_grpo_reward_grid_matches_oracle():
    grid = list(itertools.product((True, False), (0, 1024, 3000, 4096, 6000), (0.5, -0.25)))
    assert len(grid) == 20
    for c, n, b in grid:
        assert grpo_reward(c, n, b) == pytest.approx(oracles.grpo_reward(c, n, b), abs=1e-9)


# -- rank bonuses


def test_rank_bonus_examples():
    assert rank_bonuses([(True, 10), (True, 20), (True, 30), (True, 40)]) == [0.5, 0.25, 0.0, -0.25]
    assert rank_bonuses([(False, 1)] * 4) == [-0.25] * 4
    assert rank_bonuses([(False, 1), (True, 99), (False, 2), (False, 3)]) == [-0.25, 0.5, -0.25, -0.25]


def test_rank_bonus_ties_by_position():
    assert rank_bonuses([(True, 5), (True, 5), (False, 1), (True, 1)]) == [0.25, 0.0, -0.25, 0.5]


def test_rank_bonus_group_size():
    with pytest.raises(DomainError):
        rank_bonuses([(True, 1)] * 3)


def test_rank_bonus_matches_permutation_oracle():
    rng = random.Random(5)
    for _ in range(300):
        group = [(rng.random() < 0.6, rng.randint(1, 6)) for _ in range(4)]
        assert rank_bonuses(group) == oracles.rank_bonuses(group), group


# -- SFT and DPO filters


def test_sft_examples():
    assert len(export_sft([_labeled(ExitKind.VERIFIED, True, 5, 10)])) == 1
    assert export_sft([_labeled(ExitKind.VERIFIED, True, 7, 10)]) == []
    assert export_sft([_labeled(ExitKind.VERIFIED, True, 6, 10)]) == []  # 0.6 is not below the cap
    assert export_sft([_labeled(ExitKind.VERIFIED, False, 5, 10)]) == []
    assert export_sft([_labeled(ExitKind.LOOP_BREAKER, True, 5, 10)]) == []


def test_sft_payload():
    (row,) = export_sft([_labeled(ExitKind.VERIFIED, True, 2, 10)])
    d = row.to_dict()
    assert d["kind"] == "SFT" and d["chain"] == "chain" and d["answer"] == "5"
    assert d["ratio"] == 0.2 and d["stop_step"] == 2 and d["full_steps"] == 10


def test_sft_filter_matches_oracle():
    rng = random.Random(9)
    items = []
    for i in range(200):
        kind = rng.choice(list(ExitKind))
        full = rng.randint(1, 12)
        items.append(_labeled(kind, rng.random() < 0.7, rng.randint(1, full), full, qid=f"e{i}"))
    got = {r.id for r in export_sft(items)}
    expect = {
        it.episode.question_id
        for it in items
        if oracles.sft_keep(it.episode.exit_kind.value, it.correct, it.episode.stop_step, it.full_steps)
    }
    assert got == expect


def test_dpo_rules():
    assert len(export_dpo([_labeled(ExitKind.VERIFIED, True, 3, 10)])) == 1
    assert export_dpo([_labeled(ExitKind.VERIFIED, False, 3, 10)]) == []
    assert export_dpo([_labeled(ExitKind.VERIFIED, True, 3, 10, full_correct=False)]) == []
    assert export_dpo([_labeled(ExitKind.FULL, True, 10, 10)]) == []


def test_dpo_payload_is_self_contained():
    item = _labeled(ExitKind.LOOP_BREAKER, True, 3, 4)
    (row,) = export_dpo([item])
    assert row.payload["chosen_chain"] == "chain"
    assert row.payload["rejected_chain"] == item.trace.reasoning_text
    assert row.payload["rejected_answer"] == item.trace.final_answer


# -- labelling and GRPO rows from real episodes


def _episode():
    trace, emb = flagged_trace([0, 0, 1, 1, 0, 0, 0, 0, 0, 0], {3: ("5", 0.99), 4: ("5", 0.99)}, gold="5", qid="g")
    ep = run_episode(trace.question, ReplayBackend(trace), emb, ExitConfig(), trace.id)
    return trace, ep


def test_label_episodes_counts_segmented_steps():
    trace, ep = _episode()
    (item,) = label_episodes([ep], [trace])
    assert item.full_steps == 10 and item.correct and item.full_correct
    (row,) = export_sft([item])
    assert row.payload["ratio"] == 0.4


def test_label_episodes_errors():
    trace, ep = _episode()
    with pytest.raises(MissingFieldError):
        label_episodes([ep], [])
    nogold, _ = flagged_trace([0], qid="g")
    with pytest.raises(MissingFieldError, match="gold"):
        label_episodes([ep], [nogold])


def test_grpo_rows_per_flagged_step():
    trace, ep = _episode()
    rows = export_grpo([ep], [trace])
    assert [r.id for r in rows] == ["g@3", "g@4"]
    prefix = "\n\n".join(s.text for s in trace.steps[:3])
    assert rows[0].payload["prefix"] == prefix
    assert rows[0].payload["prompt"] == f"{trace.question}\n{prefix}\n</think>"
    assert rows[0].payload["solution"] == "5"
