"""Backend-neutral types: token events, probe completions, streams."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Protocol, Sequence, runtime_checkable

from ..errors import ContractViolation
from ..redundancy import Embedding

__all__ = [
    "TokenEvent",
    "ProbeCompletion",
    "TokenStream",
    "GenerationBackend",
    "EmbeddingBackend",
    "EndOfThinkingDetector",
]


@dataclass(frozen=True)
class TokenEvent:
    text: str
    logprob: float = 0.0
    is_end_of_thinking: bool = False

    def __post_init__(self) -> None:
        # tolerate float noise just above zero from some servers
        if not math.isfinite(self.logprob) or self.logprob > 1e-6:
            raise ContractViolation(f"token logprob must be finite and <= 0, got {self.logprob}")


@dataclass(frozen=True)
class ProbeCompletion:
    """Raw output of one side generation from a truncated prefix."""

    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]
    top_logprobs: tuple[Mapping[str, float], ...] | None = None
    completion_tokens: int | None = None

    @property
    def text(self) -> str:
        return "".join(self.tokens)

    @property
    def n_tokens(self) -> int:
        return self.completion_tokens if self.completion_tokens is not None else len(self.tokens)


class TokenStream:
    """Iterator over :class:`TokenEvent` that can be cancelled mid-flight."""

    def __init__(self, events: Iterator[TokenEvent], on_cancel: Callable[[], None] | None = None) -> None:
        self._events = events
        self._on_cancel = on_cancel
        self.cancelled = False

    def __iter__(self) -> TokenStream:
        return self

    def __next__(self) -> TokenEvent:
        if self.cancelled:
            raise StopIteration
        return next(self._events)

    def cancel(self) -> None:
        if self.cancelled:
            return
        self.cancelled = True
        if self._on_cancel is not None:
            self._on_cancel()
        close = getattr(self._events, "close", None)
        if close is not None:
            close()


@runtime_checkable
class GenerationBackend(Protocol):
    def stream(self, question: str) -> TokenStream: ...

    def probe(self, question: str, context: str, max_tokens: int) -> ProbeCompletion: ...


@runtime_checkable
class EmbeddingBackend(Protocol):
    def embed(self, text: str) -> Embedding: ...

    def dim(self) -> int: ...


class EndOfThinkingDetector:
    """Spot a delimiter that may be split across several tokens."""

    def __init__(self, delimiter: str = "</think>") -> None:
        self.delimiter = delimiter
        self._tail = ""
        self.seen = False

    def feed(self, text: str) -> bool:
        if self.seen or not self.delimiter:
            return False
        window = self._tail + text
        if self.delimiter in window:
            self.seen = True
            return True
        self._tail = window[-(len(self.delimiter) - 1) :] if len(self.delimiter) > 1 else ""
        return False


def events_from_pairs(pairs: Sequence[tuple[str, float]]) -> list[TokenEvent]:
    return [TokenEvent(t, lp) for t, lp in pairs]
