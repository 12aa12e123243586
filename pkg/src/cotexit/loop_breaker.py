"""Late-stage fallback exit for chains stuck in consecutive redundancy."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .verification import ProbeResult

__all__ = ["LoopBreakerConfig", "LoopBreaker"]


@dataclass(frozen=True)
class LoopBreakerConfig:
    min_steps: int = 50
    m: int | None = None  # None disables the loop breaker
    min_confidence_gate: float = 0.8

    def __post_init__(self) -> None:
        if self.min_steps < 0:
            raise ConfigurationError(f"loop.min_steps must be >= 0, got {self.min_steps}")
        if self.m is not None and self.m < 1:
            raise ConfigurationError(f"loop.m must be >= 1 when set, got {self.m}")

    @property
    def enabled(self) -> bool:
        return self.m is not None


@dataclass
class LoopBreaker:
    """Per-episode state.  Call :meth:`record_probe` for every probe and
    :meth:`observe_step` once per step, after redundancy scoring."""

    cfg: LoopBreakerConfig
    consecutive_redundant: int = 0
    steps_seen: int = 0
    best_probe: ProbeResult | None = None

    def record_probe(self, probe: ProbeResult) -> None:
        if probe.malformed:
            return
        # strict: on ties the earlier probe stays
        if self.best_probe is None or probe.confidence > self.best_probe.confidence:
            self.best_probe = probe

    def observe_step(self, is_redundant: bool) -> bool:
        self.steps_seen += 1
        self.consecutive_redundant = self.consecutive_redundant + 1 if is_redundant else 0
        cfg = self.cfg
        return (
            cfg.m is not None
            and self.steps_seen > cfg.min_steps
            and self.consecutive_redundant >= cfg.m
            and self.best_probe is not None
            and self.best_probe.confidence > cfg.min_confidence_gate
        )
