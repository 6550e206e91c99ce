"""Trajectory parsing, reward shaping, curation and GRPO kernel utilities
for tool-using reasoning traces."""

from .curation import (
    MixSpec,
    PreferencePair,
    TrajectoryCategory,
    build_preference_pairs,
    categorize,
    sample_mix,
)
from .grpo import GroupSample, GrpoConfig, group_advantages, grpo_group_loss
from .overthinking import CurationPlan, curate_by_overthinking, overthinking_score
from .rewards import combined_reward, lambda_schedule, rule_based_hrm, token_efficiency_penalty
from .structural import TagBonusTable, structural_reward
from .trajectory import (
    Mode,
    Outcome,
    StepRecord,
    TagKind,
    Trajectory,
    check_termination,
    classify_step_outcome,
    parse_trajectory,
    serialize_trajectory,
)

__version__ = "0.1.0"
