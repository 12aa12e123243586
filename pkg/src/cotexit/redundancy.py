"""Step-level semantic redundancy.

A step is a candidate exit when its embedding is close to at least one of the
``k`` steps before it.  Reasoning semantic entropy over a window of steps is
provided as an offline diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "Embedding",
    "RedundancyConfig",
    "RedundancyVerdict",
    "cosine",
    "redundancy_score",
    "cluster_steps",
    "reasoning_semantic_entropy",
]

_NORM_TOL = 1e-6


class Embedding:
    """A unit-normalised vector.  Normalisation happens once, here."""

    __slots__ = ("_values",)

    def __init__(self, values: Sequence[float] | np.ndarray) -> None:
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ConfigurationError("embedding must have at least one dimension")
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("embedding contains non-finite values")
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise ConfigurationError("cannot normalise a zero vector")
        if abs(norm - 1.0) > _NORM_TOL:
            arr = arr / norm
        arr.setflags(write=False)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return int(self._values.shape[0])

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Embedding) and np.array_equal(self._values, other._values)

    def __repr__(self) -> str:
        return f"Embedding(dim={self.dim})"


def _vec(x: Embedding | Sequence[float] | np.ndarray) -> np.ndarray:
    return x.values if isinstance(x, Embedding) else np.asarray(x, dtype=np.float64)


def cosine(u: Embedding | np.ndarray, v: Embedding | np.ndarray) -> float:
    a, b = _vec(u), _vec(v)
    if a.shape != b.shape:
        raise ConfigurationError(f"embedding dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if isinstance(u, Embedding) and isinstance(v, Embedding):
        c = float(a @ b)
    else:
        c = float(a @ b) / float(np.linalg.norm(a) * np.linalg.norm(b))
    return min(1.0, max(-1.0, c))


@dataclass(frozen=True)
class RedundancyConfig:
    k: int = 1
    tau_sim: float = 0.35

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if not (-1.0 <= self.tau_sim <= 1.0):
            raise ConfigurationError(f"tau_sim must lie in [-1, 1], got {self.tau_sim}")


@dataclass(frozen=True)
class RedundancyVerdict:
    score: float
    is_redundant: bool
    compared_against: tuple[int, ...]


def redundancy_score(
    current: Embedding,
    history: Sequence[Embedding],
    cfg: RedundancyConfig | None = None,
) -> RedundancyVerdict:
    """Max cosine between ``current`` and the last ``k`` history entries.

    ``compared_against`` holds 1-based positions into ``history``.  With no
    history there is nothing to be redundant with: score 0, never flagged.
    """
    cfg = cfg or RedundancyConfig()
    if not history:
        return RedundancyVerdict(0.0, False, ())
    t = len(history)
    start = max(0, t - cfg.k)
    score = max(cosine(h, current) for h in history[start:])
    return RedundancyVerdict(score, score > cfg.tau_sim, tuple(range(start + 1, t + 1)))


def cluster_steps(window: Sequence[Embedding], threshold: float) -> list[int]:
    """Greedy clustering: join the first cluster whose founder is close enough."""
    founders: list[Embedding] = []
    labels = []
    for e in window:
        for idx, f in enumerate(founders):
            if cosine(f, e) >= threshold:
                labels.append(idx)
                break
        else:
            founders.append(e)
            labels.append(len(founders) - 1)
    return labels


def reasoning_semantic_entropy(window: Sequence[Embedding], cluster_threshold: float = 0.35) -> float:
    """Natural-log entropy of cluster proportions over ``window``."""
    if not window:
        raise DomainError("reasoning semantic entropy needs a non-empty window")
    if not (0.0 < cluster_threshold <= 1.0):
        raise DomainError(f"cluster_threshold must lie in (0, 1], got {cluster_threshold}")
    labels = cluster_steps(window, cluster_threshold)
    w = len(labels)
    counts = np.bincount(labels)
    if len(counts) == 1:
        return 0.0
    if len(counts) == w:
        return math.log(w)
    p = counts / w
    h = float(-(p * np.log(p)).sum())
    return min(max(h, 0.0), math.log(w))
