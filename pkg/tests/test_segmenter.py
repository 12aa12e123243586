import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotexit.errors import ConfigurationError
from cotexit.segmenter import (
    IncrementalSegmenter,
    RawSegment,
    SegmenterConfig,
    StepRole,
    approx_tokens,
    assign_role,
    feed_incremental,
    is_enumerated,
    merge_segments,
    reconstruct,
    segment,
    split_paragraphs,
)

CORPUS = Path(__file__).parent / "fixtures" / "segmenter_corpus.jsonl"


def texts(segs):
    return [s.text for s in segs]


def filler(n, word="value"):
    """Plain prose of exactly n characters, free of cue words and digits."""
    out = ""
    while len(out) < n:
        out += word + " "
    return out[:n - 1] + "."


def seg(text, ordinal=1):
    return RawSegment(text, len(text), ordinal)


# -- split_paragraphs


def test_split_empty():
    assert split_paragraphs("") == []


def test_split_single_boundary():
    assert texts(split_paragraphs("a\n\nb")) == ["a", "b"]


def test_split_multi_blank_run():
    assert texts(split_paragraphs("a\n\n\n\nb\nc")) == ["a", "b\nc"]


def test_split_whitespace_lines_count_as_blank():
    parts = split_paragraphs("a\n \t\n b\n\t\n\nc")
    assert texts(parts) == ["a", " b", "c"]
    assert parts[0].separator == "\n \t\n"


def test_split_records_ordinals_and_lengths():
    parts = split_paragraphs("x\n\nyy\n\nzzz", start_ordinal=4)
    assert [p.ordinal for p in parts] == [4, 5, 6]
    assert [p.char_len for p in parts] == [1, 2, 3]


def test_split_leading_and_trailing_blank_lines_kept_as_metadata():
    text = "\n\n  a\n\nb\n\n\n"
    parts = split_paragraphs(text)
    assert texts(parts) == ["  a", "b"]
    assert "".join(p.leading + p.text + p.separator for p in parts) == text


def test_split_whitespace_only_is_empty():
    assert split_paragraphs("\n\n \n") == []


# -- roles


@pytest.mark.parametrize(
    "text,role",
    [
        ("plain words here", StepRole.GENERAL),
        ("Wait, that is off.", StepRole.SELF_CORRECTION),
        ("Hmm maybe not", StepRole.SELF_CORRECTION),
        ("hmmm, odd", StepRole.SELF_CORRECTION),
        ("Actually the sign flips", StepRole.SELF_CORRECTION),
        ("No, the base is wrong", StepRole.SELF_CORRECTION),
        ("Let me verify the sum", StepRole.VERIFICATION),
        ("let me check again", StepRole.VERIFICATION),
        ("We double-check the sum", StepRole.VERIFICATION),
        ("To confirm, plug in", StepRole.VERIFICATION),
        ("Therefore x is even", StepRole.CONCLUSION),
        ("Thus the claim holds", StepRole.CONCLUSION),
        ("So the answer is 5", StepRole.CONCLUSION),
        ("That gives the final answer of 5", StepRole.CONCLUSION),
        ("We are given two circles", StepRole.PROBLEM_SETUP),
        ("The problem asks for a sum", StepRole.PROBLEM_SETUP),
        ("12 + 30 = 42", StepRole.CALCULATION),
        ("so $$x$$ holds", StepRole.CALCULATION),
        ("**Wait**, recheck", StepRole.SELF_CORRECTION),
    ],
)
def test_assign_role_cue_table(text, role):
    assert assign_role(seg(text)) is role


def test_first_segment_is_problem_setup():
    assert assign_role(seg("plain words", ordinal=0)) is StepRole.PROBLEM_SETUP
    # stronger cues still win at position zero
    assert assign_role(seg("Wait, plain", ordinal=0)) is StepRole.SELF_CORRECTION


def test_cue_matching_is_prefix_based():
    assert assign_role(seg("nothing to wait for")) is StepRole.GENERAL
    assert assign_role(seg("Waiter brings soup")) is StepRole.GENERAL


def test_calculation_ratio_threshold():
    # 3 operator/digit chars out of 10 non-space characters: exactly 30%
    assert assign_role(seg("abcdefg 1+2")) is StepRole.CALCULATION
    assert assign_role(seg("abcdefgh 1+2")) is StepRole.GENERAL


@pytest.mark.parametrize(
    "text,expected",
    [("1. first", True), ("  12. x", True), ("- item", True), ("* item", True), ("Step 4: go", True),
     ("step2 go", True), ("1.5 is a number", False), ("-5 degrees", False), ("plain", False), ("12.", True)],
)
def test_enumeration_marker(text, expected):
    assert is_enumerated(text) is expected


# -- merging


def test_merge_single_500_char_segment_unchanged():
    s = filler(500)
    steps = merge_segments([(seg(s), StepRole.GENERAL)])
    assert len(steps) == 1 and steps[0].text == s and steps[0].index == 1


def test_merge_three_short_general_segments():
    parts = [seg(filler(150), i + 1) for i in range(3)]
    for p in parts[:-1]:
        object.__setattr__(p, "separator", "\n\n")
    steps = merge_segments([(p, StepRole.GENERAL) for p in parts])
    assert len(steps) == 1
    assert steps[0].char_len == 450 + 2 * 2


def test_merge_tiny_conclusion_tail_folds_into_predecessor():
    a = RawSegment(filler(900), 900, 1, "\n\n")
    b = seg("Therefore 5." + "x" * 38, 2)
    steps = merge_segments([(a, StepRole.GENERAL), (b, StepRole.CONCLUSION)])
    assert len(steps) == 1
    assert steps[0].char_len == 900 + 2 + 50


def test_merge_never_across_enumeration():
    a = RawSegment(filler(50), 50, 1, "\n\n")
    b = seg("1. " + filler(50), 2)
    steps = merge_segments([(a, StepRole.GENERAL), (b, StepRole.GENERAL)])
    assert len(steps) == 2


def test_merge_never_into_major_transition():
    a = RawSegment(filler(50), 50, 1, "\n\n")
    b = seg("Wait, " + filler(300), 2)
    steps = merge_segments([(a, StepRole.GENERAL), (b, StepRole.SELF_CORRECTION)])
    assert [s.role for s in steps] == [StepRole.GENERAL, StepRole.SELF_CORRECTION]


def test_merge_respects_l_max():
    a = RawSegment(filler(150), 150, 1, "\n\n")
    b = seg(filler(900), 2)
    steps = merge_segments([(a, StepRole.GENERAL), (b, StepRole.GENERAL)])
    assert len(steps) == 2


def test_incompatible_short_segment_not_absorbed_by_full_step():
    a = RawSegment(filler(300), 300, 1, "\n\n")
    b = RawSegment("12 * 4 = 48 so 48 - 6 = 42", 26, 2, "\n\n")
    c = seg(filler(300), 3)
    pairs = [(a, StepRole.VERIFICATION), (b, StepRole.CALCULATION), (c, StepRole.GENERAL)]
    steps = merge_segments(pairs)
    # b is short; Verification vs Calculation is incompatible, so b opens a
    # new step, which then absorbs c because it is still below l_min
    assert [s.paragraphs for s in steps] == [1, 2]


def test_six_paragraph_trace_hand_worked():
    p0 = "We are given " + filler(237)
    p1 = filler(120, "step")
    p2 = filler(150, "more")
    p3 = "Wait, " + filler(294, "recheck")
    p4 = "1. " + filler(297, "list")
    p5 = "Therefore the result is 5."
    text = "\n\n".join([p0, p1, p2, p3, p4, p5])
    steps = segment(text)
    assert [s.text for s in steps] == [
        "\n\n".join([p0, p1, p2]),
        p3,
        "\n\n".join([p4, p5]),
    ]
    # a General step takes the role of the first non-General paragraph it absorbs
    assert [s.role for s in steps] == [StepRole.PROBLEM_SETUP, StepRole.SELF_CORRECTION, StepRole.CONCLUSION]
    assert [s.index for s in steps] == [1, 2, 3]
    assert [s.char_len for s in steps] == [524, 300, 328]


def test_offline_token_estimate():
    assert approx_tokens(0) == 0
    assert approx_tokens(1) == 1
    assert approx_tokens(8) == 2
    assert approx_tokens(9) == 3
    assert segment("abcdefghi")[0].token_count == 3


def test_segment_trivial():
    assert segment("") == []
    assert len(segment("just one paragraph")) == 1


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SegmenterConfig(l_min=0)
    with pytest.raises(ConfigurationError):
        SegmenterConfig(l_min=500, l_max=500)


# -- incremental


def test_feed_incremental_emits_certain_step():
    inc = IncrementalSegmenter(SegmenterConfig(l_min=1, l_max=10))
    emitted, retained = feed_incremental(inc, "a\n\nb", False)
    assert texts(emitted) == ["a"] and retained == "b"


def test_feed_incremental_default_config_waits_for_short_steps():
    # with the default l_min a one-character step must wait: it may merge
    inc = IncrementalSegmenter()
    emitted, retained = feed_incremental(inc, "a\n\nb", False)
    assert emitted == [] and retained == "a\n\nb"
    emitted, retained = feed_incremental(inc, "", True)
    assert texts(emitted) == ["a\n\nb"] and retained == ""


def test_feed_incremental_empty_final():
    inc = IncrementalSegmenter()
    assert feed_incremental(inc, "", True) == ([], "")


def test_feed_after_final_rejected():
    inc = IncrementalSegmenter()
    inc.feed("x", is_final=True)
    with pytest.raises(RuntimeError):
        inc.feed("more")


def stream_segment(text, chunks, cfg=None):
    inc = IncrementalSegmenter(cfg)
    out, pos = [], 0
    for c in chunks:
        out += inc.feed(text[pos : pos + c])
        pos += c
    out += inc.feed(text[pos:], is_final=True)
    return out


def load_corpus():
    return [json.loads(line)["text"] for line in CORPUS.read_text(encoding="utf-8").splitlines()]


def test_char_by_char_matches_offline_on_corpus_sample():
    for text in load_corpus()[:5]:
        assert stream_segment(text, [1] * len(text)) == segment(text)


def test_emitted_plus_retained_is_everything_fed():
    text = load_corpus()[3]
    inc = IncrementalSegmenter()
    emitted = []
    for i in range(0, len(text), 37):
        emitted += inc.feed(text[i : i + 37])
        assert reconstruct(emitted) + inc.retained == text[: i + 37]


# -- properties

paragraph_text = st.text(alphabet=st.sampled_from(list("abc xyz.19=+\t")), min_size=0, max_size=400)
cue = st.sampled_from(["", "", "Wait, ", "Therefore ", "1. ", "- ", "Let me check ", "Thus "])
sep = st.sampled_from(["\n\n", "\n\n\n", "\n \n", "\n\t\n", "\n", " "])


@st.composite
def reasoning_text(draw):
    n = draw(st.integers(0, 12))
    parts = []
    for _ in range(n):
        parts.append(draw(cue) + draw(paragraph_text))
        parts.append(draw(sep))
    return "".join(parts)


@settings(max_examples=300, deadline=None)
@given(reasoning_text())
def test_reconstruction_property(text):
    steps = segment(text)
    if text.strip():
        assert reconstruct(steps) == text
    else:
        assert steps == []


@settings(max_examples=200, deadline=None)
@given(reasoning_text(), st.lists(st.integers(1, 60), max_size=40))
def test_incremental_equals_offline_property(text, chunks):
    assert stream_segment(text, chunks) == segment(text)


@settings(max_examples=100, deadline=None)
@given(reasoning_text(), st.integers(20, 200), st.integers(1, 400))
def test_incremental_equals_offline_any_config(text, l_min, extra):
    cfg = SegmenterConfig(l_min=l_min, l_max=l_min + extra)
    assert stream_segment(text, [7] * (len(text) // 7), cfg) == segment(text, cfg)


@settings(max_examples=200, deadline=None)
@given(reasoning_text())
def test_idempotence_property(text):
    steps = segment(text)
    assert segment(reconstruct(steps)) == steps


@settings(max_examples=100, deadline=None)
@given(reasoning_text())
def test_indices_strictly_increase(text):
    idx = [s.index for s in segment(text)]
    assert idx == list(range(1, len(idx) + 1))
