"""Hierarchical reward scoring, the cosine lambda curriculum, the token
efficiency penalty and the combined reward."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Callable

from .errors import EmptyTrajectory, StepOutOfRange
from .structural import DEFAULT_TABLE, TagBonusTable, structural_reward
from .trajectory import Outcome, Trajectory

DEFAULT_PENALTY_BETA = 0.2


class Rationale(str, enum.Enum):
    ENDS_IN_ERROR = "ends_in_error"
    CORRECTED_ERRORS = "corrected_errors"
    ERROR_FREE = "error_free"


@dataclass(frozen=True)
class HrmWeights:
    ends_in_error: float = -1.0
    corrected: float = 0.7
    error_free: float = 1.0


@dataclass(frozen=True)
class LambdaPair:
    lambda_tag: float

    @property
    def lambda_hrm(self) -> float:
        return 1.0 - self.lambda_tag

    def to_json(self) -> dict:
        return {"lambda_tag": self.lambda_tag, "lambda_hrm": self.lambda_hrm}


@dataclass(frozen=True)
class HrmVerdict:
    step_rewards: tuple[float, ...]
    trajectory_reward: float
    rationale: Rationale

    def to_json(self) -> dict:
        return {
            "step_rewards": list(self.step_rewards),
            "trajectory_reward": self.trajectory_reward,
            "rationale": self.rationale.value,
        }


@dataclass(frozen=True)
class RewardBreakdown:
    structural: float
    hierarchical: float
    lambdas: LambdaPair
    efficiency_penalty: float
    combined: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["lambdas"] = self.lambdas.to_json()
        return d


def lambda_schedule(training_step: int, total_steps: int, lambda_floor: float = 0.0) -> LambdaPair:
    """Cosine decay of the structural weight from 1 at step 0 to 0 at the end.

    ``lambda_floor`` lifts the end point, rescaling the curve affinely so the
    start stays at 1.
    """
    if total_steps < 1:
        raise StepOutOfRange(f"total_steps must be positive, got {total_steps}")
    if not 0 <= training_step <= total_steps:
        raise StepOutOfRange(f"training_step {training_step} outside [0, {total_steps}]")
    raw = (1.0 + math.cos(math.pi * training_step / total_steps)) / 2.0
    if lambda_floor:
        raw = lambda_floor + (1.0 - lambda_floor) * raw
    return LambdaPair(raw)


_STEP_REWARD = {Outcome.OK: 1.0, Outcome.ERROR: -1.0, Outcome.NO_EXECUTION: 0.0}


def rule_based_hrm(t: Trajectory, weights: HrmWeights = HrmWeights()) -> HrmVerdict:
    if not t.steps:
        raise EmptyTrajectory(f"trajectory {t.problem_id!r} has no steps to score")
    outcomes = t.outcomes
    step_rewards = tuple(_STEP_REWARD[o] for o in outcomes)
    if outcomes[-1] is Outcome.ERROR:
        return HrmVerdict(step_rewards, weights.ends_in_error, Rationale.ENDS_IN_ERROR)
    if Outcome.ERROR in outcomes:
        return HrmVerdict(step_rewards, weights.corrected, Rationale.CORRECTED_ERRORS)
    return HrmVerdict(step_rewards, weights.error_free, Rationale.ERROR_FREE)


def token_efficiency_penalty(
    completion_tokens: int, horizon: int, progress: float, beta: float = DEFAULT_PENALTY_BETA
) -> float:
    if horizon < 1:
        raise ValueError("horizon must be positive")
    if completion_tokens <= horizon:
        return 0.0
    return -progress * beta * (completion_tokens - horizon) / horizon


Scorer = Callable[[Trajectory], HrmVerdict]


def combined_reward(
    text: str,
    t: Trajectory,
    step: int,
    total: int,
    scorer: Scorer = rule_based_hrm,
    horizon: int = 4096,
    token_count: int = 1,
    *,
    table: TagBonusTable = DEFAULT_TABLE,
    lambda_floor: float = 0.0,
    beta: float = DEFAULT_PENALTY_BETA,
) -> RewardBreakdown:
    structural = structural_reward(text, table).total
    hierarchical = scorer(t).trajectory_reward
    lambdas = lambda_schedule(step, total, lambda_floor)
    penalty = token_efficiency_penalty(token_count, horizon, step / total, beta)
    combined = lambdas.lambda_tag * structural + lambdas.lambda_hrm * hierarchical + penalty
    return RewardBreakdown(structural, hierarchical, lambdas, penalty, combined)


def validate_verdict(v: HrmVerdict, n_steps: int | None = None) -> list[str]:
    """Return the invariant violations of a verdict (empty when valid)."""
    problems = []
    if n_steps is not None and len(v.step_rewards) != n_steps:
        problems.append(f"{len(v.step_rewards)} step rewards for {n_steps} steps")
    for r in (*v.step_rewards, v.trajectory_reward):
        if not (isinstance(r, (int, float)) and math.isfinite(r) and -1.0 <= r <= 1.0):
            problems.append(f"reward {r!r} outside [-1, 1]")
    if v.rationale is Rationale.ENDS_IN_ERROR and not v.trajectory_reward < 0:
        problems.append("ends_in_error verdict with non-negative reward")
    if v.rationale is not Rationale.ENDS_IN_ERROR and not v.trajectory_reward > 0:
        problems.append(f"{v.rationale.value} verdict with non-positive reward")
    return problems


def verdict_from_json(obj: dict) -> HrmVerdict:
    return HrmVerdict(
        tuple(float(x) for x in obj["step_rewards"]),
        float(obj["trajectory_reward"]),
        Rationale(obj["rationale"]),
    )


def scorer_request(t: Trajectory) -> dict:
    return {
        "problem_id": t.problem_id,
        "raw_text": t.text,
        "steps": [
            {
                "thought": s.thought,
                "action_input": s.action_input,
                "observation": s.observation,
                "outcome": s.outcome.value,
            }
            for s in t.steps
        ],
    }

