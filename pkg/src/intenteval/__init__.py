"""Intent-constraint evaluation toolkit.

Decomposes queries into tiered intent constraints, judges per-constraint
satisfaction with an LLM, computes the weighted constraint score, synthesizes
benchmark tasks, runs resumable batch evaluations, and reproduces the
agreement statistics used to validate the metric.
"""

from .core import (
    Band,
    Category,
    ConstraintSet,
    DEFAULT_WEIGHTS,
    Difficulty,
    IntentConstraint,
    SatisfactionLabel,
    ScoreReport,
    Tier,
    WeightConfig,
    build_score_report,
    classify_difficulty,
    constraint_score,
    perfect_rate,
    satisfied_weight,
    score_band,
    total_weight,
)

__all__ = [
    "Band",
    "Category",
    "ConstraintSet",
    "DEFAULT_WEIGHTS",
    "Difficulty",
    "IntentConstraint",
    "SatisfactionLabel",
    "ScoreReport",
    "Tier",
    "WeightConfig",
    "build_score_report",
    "classify_difficulty",
    "constraint_score",
    "perfect_rate",
    "satisfied_weight",
    "score_band",
    "total_weight",
]

__version__ = "0.1.0"
