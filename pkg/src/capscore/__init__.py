"""capscore: unit-level detailed caption scoring and preference feedback.

The pipeline decomposes captions into primitive information units,
matches them against a reference decomposition, verifies each unit with a
judge model, and scores precision/recall/F1 at the unit level. On top of
that sit a preference-pair generator (precision and richness channels)
and a small, numerically verified PPO testbed for the dual-reward
optimization recipe.
"""

__version__ = "0.1.0"

from .units import (
    CaptionSample,
    OracleSet,
    OracleUnit,
    PrimitiveUnit,
    UnitSet,
    count_matched_oracle_ids,
    partition_descriptive,
)
from .scoring import ScoreCounts, ScoreReport, aggregate, f1, precision, recall, score_caption

__all__ = [
    "__version__",
    "CaptionSample",
    "OracleSet",
    "OracleUnit",
    "PrimitiveUnit",
    "UnitSet",
    "count_matched_oracle_ids",
    "partition_descriptive",
    "ScoreCounts",
    "ScoreReport",
    "aggregate",
    "f1",
    "precision",
    "recall",
    "score_caption",
]
