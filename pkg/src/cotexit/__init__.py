"""Redundancy-gated early exit for chain-of-thought generation."""

__version__ = "0.1.0"

from .controller import (  # noqa: E402
    ControllerAction,
    EpisodeController,
    EpisodeResult,
    ExitConfig,
    ExitKind,
    run_episode,
    token_reduction,
)
from .config import load_config  # noqa: E402
from .segmenter import IncrementalSegmenter, ReasoningStep, SegmenterConfig, segment  # noqa: E402

__all__ = [
    "__version__",
    "ControllerAction",
    "EpisodeController",
    "EpisodeResult",
    "ExitConfig",
    "ExitKind",
    "run_episode",
    "token_reduction",
    "load_config",
    "IncrementalSegmenter",
    "ReasoningStep",
    "SegmenterConfig",
    "segment",
]
