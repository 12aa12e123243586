"""Offline diagnostics and training-data export."""

from .export import (
    GRPO_MAX_LEN,
    RANK_BONUSES,
    ExportRow,
    LabeledEpisode,
    export_dpo,
    export_grpo,
    export_sft,
    grpo_reward,
    label_episodes,
    rank_bonuses,
)
from .overthinking import (
    K_GRID,
    LAMBDA_GRID,
    FlaggedFraction,
    GoldenStepReport,
    SignalFailureReport,
    SignalKind,
    SweepPoint,
    TraceSplit,
    confidence_signal_failures,
    confidence_trigger,
    consistency_signal_failures,
    consistency_trigger,
    counterfactual_exits,
    golden_step,
    overthinking_fractions,
    premature_fraction,
    step_savings,
    threshold_sweep,
)

__all__ = [
    "GRPO_MAX_LEN",
    "RANK_BONUSES",
    "ExportRow",
    "LabeledEpisode",
    "export_dpo",
    "export_grpo",
    "export_sft",
    "grpo_reward",
    "label_episodes",
    "rank_bonuses",
    "K_GRID",
    "LAMBDA_GRID",
    "FlaggedFraction",
    "GoldenStepReport",
    "SignalFailureReport",
    "SignalKind",
    "SweepPoint",
    "TraceSplit",
    "confidence_signal_failures",
    "confidence_trigger",
    "consistency_signal_failures",
    "consistency_trigger",
    "counterfactual_exits",
    "golden_step",
    "overthinking_fractions",
    "premature_fraction",
    "step_savings",
    "threshold_sweep",
]
