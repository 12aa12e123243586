"""Local embedding providers.

:func:`hash_embed` is a deterministic stand-in for a trained redundancy
detector: signed feature hashing of character trigrams.  It is good at
spotting near-verbatim repetition and nothing more.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import ConfigurationError
from ..redundancy import Embedding

__all__ = ["hash_embed", "HashEmbedder", "LookupEmbedder"]

_NGRAM = 3


@lru_cache(maxsize=1 << 16)
def _bucket(gram: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "little")
    return h % dim, 1.0 if (h >> 63) & 1 else -1.0


def hash_embed(text: str, dim: int = 256) -> Embedding:
    if dim < 8:
        raise ConfigurationError(f"hash embedding needs dim >= 8, got {dim}")
    s = text.lower()
    grams = [s[i : i + _NGRAM] for i in range(len(s) - _NGRAM + 1)] or [s]
    vec = np.zeros(dim)
    for g in grams:
        idx, sign = _bucket(g, dim)
        vec[idx] += sign
    if not vec.any():
        # all contributions cancelled (or empty text): fall back to one bucket
        idx, sign = _bucket("\x00" + s, dim)
        vec[idx] = sign
    return Embedding(vec)


class HashEmbedder:
    def __init__(self, dim: int = 256) -> None:
        if dim < 8:
            raise ConfigurationError(f"hash embedding needs dim >= 8, got {dim}")
        self._dim = dim

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> Embedding:
        return hash_embed(text, self._dim)


class LookupEmbedder:
    """Scripted embeddings for tests: exact text lookup, optional fallback."""

    def __init__(
        self,
        table: Mapping[str, Sequence[float]],
        fallback: Callable[[str], Embedding] | None = None,
    ) -> None:
        self._table = {k: Embedding(v) for k, v in table.items()}
        dims = {e.dim for e in self._table.values()}
        if len(dims) > 1:
            raise ConfigurationError(f"lookup table mixes dimensions {sorted(dims)}")
        self._dim = dims.pop() if dims else 0
        self._fallback = fallback
        self.calls = 0

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> Embedding:
        self.calls += 1
        if text in self._table:
            return self._table[text]
        if self._fallback is None:
            raise KeyError(f"no scripted embedding for {text[:40]!r}")
        return self._fallback(text)
