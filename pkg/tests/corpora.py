"""Synthetic trace corpora for analyzer checks."""

import random

from cotexit.backends import TraceRecord, TraceStep

ANSWERS = ("3", "5", "7", None)
CONFS = (0.5, 0.9, 0.93, 0.94, 0.95, 0.96, 0.97, 0.99, None)


def random_traces(n=200, seed=7, max_steps=20):
    rng = random.Random(seed)
    out = []
    for i in range(n):
        steps = []
        for j in range(rng.randint(1, max_steps)):
            ans = rng.choice(ANSWERS)
            conf = rng.choice(CONFS) if ans is not None else None
            steps.append(TraceStep(f"t{i} s{j}", rng.randint(1, 40), ans, conf))
        if all(s.trial_answer is None for s in steps):
            steps[-1] = TraceStep(steps[-1].text, steps[-1].token_count, "5", 0.9)
        out.append(
            TraceRecord(
                id=f"r{i:03d}",
                question=f"q{i}",
                task="math",
                steps=tuple(steps),
                final_answer=rng.choice(("3", "5", "7")),
                gold_answer=rng.choice(("3", "5", "7", None)),
            )
        )
    return out


def as_plain(trace):
    return {
        "gold": trace.gold_answer,
        "final": trace.final_answer,
        "answers": [s.trial_answer for s in trace.steps],
        "confs": [s.trial_confidence for s in trace.steps],
    }


def post_fraction_corpus():
    """Every trace with a golden step spends 45% of its tokens after it.

    Each has 20 steps of ``t`` tokens with the golden step at 11, so
    post/total = 9t/20t.  Two traces never reach their final answer and must
    not move the pooled figure.
    """
    out = []
    for n, t in enumerate((1, 3, 4, 7, 10, 25)):
        steps = [TraceStep(f"p{n}-{j}", t, "2" if j < 10 else "9", 0.9) for j in range(20)]
        out.append(TraceRecord(f"pf{n}", "q", "math", tuple(steps), final_answer="9", gold_answer="9"))
    for n in range(2):
        steps = [TraceStep(f"x{n}-{j}", 13, "1", 0.9) for j in range(5)]
        out.append(TraceRecord(f"ng{n}", "q", "math", tuple(steps), final_answer="4", gold_answer="4"))
    return out


def failure_corpus():
    """20 triggered traces at lambda 0.95: 6 fail, 4 of those prematurely.

    Five more never trigger and three lack a gold answer; neither may enter
    the rates.
    """
    out = []

    def add(tid, answer_at_trigger, final, gold, conf=0.99):
        steps = (
            TraceStep("a", 10, "8", 0.5),
            TraceStep("b", 10, answer_at_trigger, conf),
            TraceStep("c", 10, final, 0.9),
        )
        out.append(TraceRecord(tid, "q", "math", steps, final_answer=final, gold_answer=gold))

    for i in range(14):
        add(f"ok{i}", "5", "5", "5")
    for i in range(4):
        add(f"pre{i}", "6", "5", "5")  # wrong early, right at the end
    for i in range(2):
        add(f"nr{i}", "6", "6", "5")  # wrong throughout
    for i in range(5):
        add(f"quiet{i}", "5", "5", "5", conf=0.9)
    for i in range(3):
        add(f"nogold{i}", "6", "5", None)
    return out
