"""Reference implementations written independently of the package.

Each one favours the most literal reading of its rule over speed, so that
agreement with the package is meaningful.
"""

from __future__ import annotations

import hashlib
import itertools
import math


def exit_formula(confs, answers, lam, eps):
    """Three conjuncts, evaluated literally over a window of probes."""
    c1, a1 = confs[0], answers[0]
    confident = c1 > lam
    consistent = all(a == a1 for a in answers[1:])
    stable = all(c >= c1 - eps for c in confs[1:])
    return confident and consistent and stable


def geometric_mean(probs):
    prod = 1.0
    for p in probs:
        prod *= p
    return prod ** (1.0 / len(probs))


def softmax_choice(logits, picked, temperature=1.0):
    exps = {k: math.exp(v / temperature) for k, v in logits.items()}
    return exps[picked] / sum(exps.values())


def golden_step(trial_answers, final):
    hits = [i + 1 for i, a in enumerate(trial_answers) if a is not None and a.strip() == final.strip()]
    return min(hits) if hits else None


def first_confidence_trigger(confs, answers, lam):
    for i in range(len(confs)):
        if answers[i] is not None and confs[i] is not None and confs[i] > lam:
            return i + 1
    return None


def first_consistency_trigger(answers, k):
    # scan every window of k consecutive steps; return earliest window end
    for end in range(k, len(answers) + 1):
        window = answers[end - k : end]
        if all(a is not None for a in window) and len({a.strip() for a in window}) == 1:
            return end
    return None


def failure_stats(traces, trigger_of):
    """Return (triggered, failed, premature) counts over traces with gold."""
    triggered = failed = premature = 0
    for t in traces:
        if t["gold"] is None:
            continue
        step = trigger_of(t)
        if step is None:
            continue
        triggered += 1
        if t["answers"][step - 1].strip() != t["gold"].strip():
            failed += 1
            if t["final"].strip() == t["gold"].strip():
                premature += 1
    return triggered, failed, premature


def token_reduction(method, full):
    return 100.0 - 100.0 * method / full


def grpo_reward(correct, length, bonus):
    base = 0.0
    if correct:
        base = 1.0 + 0.5 * (1.0 - length / 4096.0)
    return base + bonus


def rank_bonuses(group):
    """Try every ordering; the one sorting correct rollouts by (length, position) wins."""
    table = (0.5, 0.25, 0.0, -0.25)
    correct = [i for i, (ok, _) in enumerate(group) if ok]
    best = None
    for perm in itertools.permutations(correct):
        key = [(group[i][1], i) for i in perm]
        if key == sorted(key):
            best = perm
            break
    out = [-0.25] * len(group)
    for rank, i in enumerate(best or ()):
        out[i] = table[rank]
    return out


def hash_embed(text, dim=256):
    """Signed trigram hashing, pure Python."""
    s = text.lower()
    grams = [s[i : i + 3] for i in range(len(s) - 2)] or [s]
    vec = [0.0] * dim
    for g in grams:
        h = int.from_bytes(hashlib.blake2b(g.encode("utf-8"), digest_size=8).digest(), "little")
        vec[h % dim] += 1.0 if h >> 63 else -1.0
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec]


def cosine(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    return dot / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))


def entropy_of_sizes(sizes):
    n = sum(sizes)
    return -sum((s / n) * math.log(s / n) for s in sizes)


def sft_keep(exit_kind, correct, stop, full, cap=0.6):
    return exit_kind == "VerifiedExit" and bool(correct) and stop / full < cap
