"""Trajectory stratification, mix sampling and preference-pair construction."""

from __future__ import annotations

import enum
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence, TypeVar

from .errors import PoolShortfall, Unclassifiable
from .trajectory import Mode, Outcome, Trajectory

T = TypeVar("T")


class TrajectoryCategory(str, enum.Enum):
    SUCCESS = "success"
    ERROR_CORRECTION = "error_correction"
    SELF_CORRECTION = "self_correction"
    PERSISTENT_FAILURE = "persistent_failure"


class SftSource(str, enum.Enum):
    ERROR_FREE = "error_free"
    ERROR_CORRECTION = "error_correction"
    EXTERNAL_REASONING = "external_reasoning"


DEFAULT_CORRECTION_MARKERS: tuple[str, ...] = (
    "i made a mistake",
    "correcting",
    "let me correct",
    "that was wrong",
    "i was wrong",
)


@dataclass(frozen=True)
class MixSpec:
    fractions: Mapping[str, float]
    seed: int = 0

    def __post_init__(self):
        if any(f < 0 for f in self.fractions.values()):
            raise ValueError("mix fractions must be non-negative")
        if not math.isclose(math.fsum(self.fractions.values()), 1.0, abs_tol=1e-9):
            raise ValueError(f"mix fractions must sum to 1, got {dict(self.fractions)}")


STRATIFICATION_MIX = MixSpec(
    {
        TrajectoryCategory.SUCCESS: 0.40,
        TrajectoryCategory.ERROR_CORRECTION: 0.35,
        TrajectoryCategory.SELF_CORRECTION: 0.15,
        TrajectoryCategory.PERSISTENT_FAILURE: 0.10,
    }
)
SFT_MIX = MixSpec(
    {
        SftSource.ERROR_FREE: 0.60,
        SftSource.ERROR_CORRECTION: 0.20,
        SftSource.EXTERNAL_REASONING: 0.20,
    }
)


def _has_marker(text: str, markers: Sequence[str]) -> bool:
    low = text.lower()
    return any(m in low for m in markers)


def categorize(
    t: Trajectory, markers: Sequence[str] = DEFAULT_CORRECTION_MARKERS
) -> TrajectoryCategory:
    """Assign one of the four pedagogical categories.

    Rules are tried in order: persistent failure (ends in an execution
    error), self-correction (a correction marker in a thought right after an
    Ok step), success (no errors and an answer), error correction (an error
    later followed by an Ok step).
    """
    outcomes = t.outcomes
    if t.ends_in_error:
        return TrajectoryCategory.PERSISTENT_FAILURE
    for prev, step in zip(t.steps, t.steps[1:]):
        if prev.outcome is Outcome.OK and _has_marker(step.thought, markers):
            return TrajectoryCategory.SELF_CORRECTION
    if Outcome.ERROR not in outcomes and t.answer is not None:
        return TrajectoryCategory.SUCCESS
    if Outcome.ERROR in outcomes:
        first_err = outcomes.index(Outcome.ERROR)
        if Outcome.OK in outcomes[first_err + 1:]:
            return TrajectoryCategory.ERROR_CORRECTION
    raise Unclassifiable(f"trajectory {t.problem_id!r} matches no category")


def sft_source(t: Trajectory, category: TrajectoryCategory) -> SftSource | None:
    """Which SFT pool a trajectory feeds; persistent failures feed none."""
    if t.mode is Mode.REFLECTION:
        return SftSource.EXTERNAL_REASONING
    if category is TrajectoryCategory.ERROR_CORRECTION:
        return SftSource.ERROR_CORRECTION
    if category in (TrajectoryCategory.SUCCESS, TrajectoryCategory.SELF_CORRECTION):
        return SftSource.ERROR_FREE
    return None


def apportion(fractions: Mapping[str, float], n: int) -> dict[str, int]:
    """Largest-remainder quotas summing to ``n``; ties go to the earlier key.

    Fractions are read through their decimal repr so that 0.35 * 100 is 35
    exactly rather than 35.000000000000004.
    """
    exact = {k: Fraction(repr(float(f))) * n for k, f in fractions.items()}
    total = sum(Fraction(repr(float(f))) for f in fractions.values())
    exact = {k: v / total for k, v in exact.items()}
    quotas = {k: math.floor(v) for k, v in exact.items()}
    left = n - sum(quotas.values())
    keys = list(fractions)
    by_remainder = sorted(keys, key=lambda k: (-(exact[k] - quotas[k]), keys.index(k)))
    for k in by_remainder[:left]:
        quotas[k] += 1
    return quotas


def sample_mix(pools: Mapping[str, Sequence[T]], spec: MixSpec, n: int) -> list[T]:
    if n < 1:
        raise ValueError("n must be positive")
    quotas = apportion(spec.fractions, n)
    short = [(k, q, len(pools.get(k, ()))) for k, q in quotas.items() if q > len(pools.get(k, ()))]
    if short:
        k, q, have = short[0]
        err = PoolShortfall(str(getattr(k, "value", k)), q, have)
        err.shortfalls = {str(getattr(k, "value", k)): q - h for k, q, h in short}
        err.args = (f"{err.args[0]}; deficits {err.shortfalls}",)
        raise err
    rng = random.Random(spec.seed)
    out: list[T] = []
    for k, q in quotas.items():
        if q:
            out.extend(rng.sample(list(pools[k]), q))
    rng.shuffle(out)
    return out


@dataclass(frozen=True)
class PreferencePair:
    problem_id: str
    rejected: Trajectory
    preferred: Trajectory


def build_preference_pairs(
    pool: Sequence[Trajectory], markers: Sequence[str] = DEFAULT_CORRECTION_MARKERS
) -> list[PreferencePair]:
    """One (worst failure, leanest success) pair per problem id.

    Worst = most error steps; leanest = fewest steps.  Ties keep the earlier
    trajectory in ``pool``.  Unclassifiable trajectories are ignored.
    """
    groups: dict[str, dict[str, list[Trajectory]]] = defaultdict(
        lambda: {"rejected": [], "preferred": []}
    )
    for t in pool:
        try:
            cat = categorize(t, markers)
        except Unclassifiable:
            continue
        side = "rejected" if cat is TrajectoryCategory.PERSISTENT_FAILURE else "preferred"
        groups[t.problem_id][side].append(t)
    pairs = []
    for pid, g in groups.items():
        if g["rejected"] and g["preferred"]:
            worst = max(g["rejected"], key=lambda t: t.error_count)
            best = min(g["preferred"], key=lambda t: len(t.steps))
            pairs.append(PreferencePair(pid, worst, best))
    return pairs


@dataclass
class StratificationReport:
    counts: dict[str, int] = field(default_factory=dict)
    unclassifiable: int = 0

    def rows(self) -> list[dict]:
        total = sum(self.counts.values())
        return [
            {"category": c.value, "count": self.counts.get(c.value, 0),
             "fraction": self.counts.get(c.value, 0) / total if total else 0.0}
            for c in TrajectoryCategory
        ]


def stratify(
    pool: Sequence[Trajectory], markers: Sequence[str] = DEFAULT_CORRECTION_MARKERS
) -> tuple[dict[TrajectoryCategory, list[Trajectory]], StratificationReport]:
    buckets: dict[TrajectoryCategory, list[Trajectory]] = {c: [] for c in TrajectoryCategory}
    report = StratificationReport()
    for t in pool:
        try:
            buckets[categorize(t, markers)].append(t)
        except Unclassifiable:
            report.unclassifiable += 1
    report.counts = {c.value: len(v) for c, v in buckets.items()}
    return buckets, report
