"""Overthinking signals, the composite score and the 90/10 curation sampler."""

from __future__ import annotations

import math
import random
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import InsufficientPool
from .trajectory import Mode, Trajectory

DEFAULT_FILLER_LEXICON: tuple[str, ...] = (
    "let me check again",
    "wait",
    "let me re-examine",
    "hmm",
    "on second thought",
)
NGRAM_ORDER = 3
SIMILARITY_FLOOR = 0.2
FILLER_DENSITY = 0.05
DEFAULT_WEIGHTS = (0.4, 0.3, 0.3)  # repetition, filler, novelty deficit
DEFAULT_THRESHOLD = 0.5
DEFAULT_LOW_POOL_FRACTION = 0.90

_WORD = re.compile(r"\w+")
_BLANK_LINE = re.compile(r"\n[ \t]*\n")


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def segment_reasoning(t: Trajectory) -> list[str]:
    """Agentic: one segment per step thought.  Reflection: think text split on
    blank lines.  Whitespace-only segments are dropped."""
    if t.mode is Mode.AGENTIC:
        segments = [s.thought for s in t.steps]
    else:
        blocks = [*t.thoughts, *(s.thought for s in t.steps)]
        segments = [piece for b in blocks for piece in _BLANK_LINE.split(b)]
    return [s for s in segments if s.strip()]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def multiset_jaccard(a: Counter, b: Counter) -> float:
    union = sum((a | b).values())
    if union == 0:
        return 0.0
    return sum((a & b).values()) / union


def repetition_score(
    segments: Sequence[str], n: int = NGRAM_ORDER, floor: float = SIMILARITY_FLOOR
) -> float:
    """Mean floor-rescaled n-gram Jaccard similarity of adjacent segments."""
    if len(segments) < 2:
        return 0.0
    grams = [_ngrams(words(s), n) for s in segments]
    total = 0.0
    for a, b in zip(grams, grams[1:]):
        sim = multiset_jaccard(a, b)
        total += max(0.0, (sim - floor) / (1.0 - floor))
    return total / (len(grams) - 1)


def _phrase_pattern(phrase: str) -> re.Pattern:
    return re.compile(r"\b" + re.escape(phrase.lower()) + r"\b")


def filler_score(
    segments: Sequence[str],
    lexicon: Sequence[str] = DEFAULT_FILLER_LEXICON,
    density: float = FILLER_DENSITY,
) -> float:
    """Filler-phrase hits normalised by expected density, capped at 1.

    Accepts either segments or a :class:`Trajectory` (segmented first).
    """
    if isinstance(segments, Trajectory):
        segments = segment_reasoning(segments)
    if not lexicon:
        raise ValueError("filler lexicon is empty")
    pats = [_phrase_pattern(p) for p in lexicon]
    hits = 0
    n_words = 0
    for seg in segments:
        low = seg.lower()
        hits += sum(len(p.findall(low)) for p in pats)
        n_words += len(words(seg))
    return min(1.0, hits / (density * n_words + 1.0))


def novelty_deficit_score(segments: Sequence[str]) -> float:
    token_lists = [w for w in (words(s) for s in segments) if w]
    if len(token_lists) < 2:
        return 0.0
    seen = set(token_lists[0])
    novelties = []
    for toks in token_lists[1:]:
        novelties.append(sum(1 for w in toks if w not in seen) / len(toks))
        seen.update(toks)
    return 1.0 - sum(novelties) / len(novelties)


@dataclass(frozen=True)
class OverthinkingSignals:
    repetition: float
    filler: float
    novelty_deficit: float
    composite: float
    flagged: bool


def combine_signals(
    repetition: float,
    filler: float,
    novelty_deficit: float,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    threshold: float = DEFAULT_THRESHOLD,
) -> OverthinkingSignals:
    w_r, w_f, w_n = weights
    if min(weights) < 0 or not math.isclose(w_r + w_f + w_n, 1.0, abs_tol=1e-9):
        raise ValueError(f"weights must be non-negative and sum to 1, got {weights}")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    composite = min(1.0, max(0.0, w_r * repetition + w_f * filler + w_n * novelty_deficit))
    return OverthinkingSignals(repetition, filler, novelty_deficit, composite, composite > threshold)


def overthinking_score(
    t: Trajectory,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    threshold: float = DEFAULT_THRESHOLD,
    lexicon: Sequence[str] = DEFAULT_FILLER_LEXICON,
) -> OverthinkingSignals:
    segments = segment_reasoning(t)
    return combine_signals(
        repetition_score(segments),
        filler_score(segments, lexicon),
        novelty_deficit_score(segments),
        weights,
        threshold,
    )


# ---------------------------------------------------------------------------
# curation


@dataclass(frozen=True)
class CurationPlan:
    sample_size: int
    seed: int = 0
    low_pool_fraction: float = DEFAULT_LOW_POOL_FRACTION
    # high-pool members must show novelty_deficit below this to be preferred
    novelty_threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if not 0.0 < self.low_pool_fraction <= 1.0:
            raise ValueError("low_pool_fraction must lie in (0, 1]")
        if self.sample_size < 1:
            raise ValueError("sample_size must be positive")


@dataclass(frozen=True)
class CurationRow:
    problem_id: str
    composite: float
    pool: str  # "low" | "high"
    selected: bool


def curate_with_report(
    pool: Sequence[tuple[Trajectory, float]], plan: CurationPlan
) -> tuple[list[Trajectory], list[CurationRow]]:
    """Draw ``plan.sample_size`` trajectories, ``ceil(f*n)`` from the
    lower-scoring half of the ranking and the rest from the upper half.

    Upper-half candidates with genuinely new content (novelty deficit below
    ``plan.novelty_threshold``) are drawn first; the remaining upper-half
    members only fill in when those run out.  If the lower half cannot cover
    its quota (small pools) the shortfall moves to the upper half.
    """
    n = plan.sample_size
    if n > len(pool):
        raise InsufficientPool(f"sample_size {n} exceeds pool of {len(pool)}")
    for _, score in pool:
        if not math.isfinite(score):
            raise ValueError("pool scores must be finite")

    order = sorted(range(len(pool)), key=lambda i: (pool[i][1], pool[i][0].problem_id))
    split = (len(order) + 1) // 2
    low, high = order[:split], order[split:]

    rng = random.Random(plan.seed)
    low_take = min(math.ceil(plan.low_pool_fraction * n), len(low))
    drawn = rng.sample(low, low_take)

    high_take = n - low_take
    if high_take:
        novelty = {i: novelty_deficit_score(segment_reasoning(pool[i][0])) for i in high}
        novel = [i for i in high if novelty[i] < plan.novelty_threshold]
        rest = [i for i in high if novelty[i] >= plan.novelty_threshold]
        first = rng.sample(novel, min(high_take, len(novel)))
        drawn += first + rng.sample(rest, high_take - len(first))

    chosen = set(drawn)
    low_set = set(low)
    report = [
        CurationRow(pool[i][0].problem_id, pool[i][1], "low" if i in low_set else "high", i in chosen)
        for i in order
    ]
    return [pool[i][0] for i in drawn], report


def curate_by_overthinking(
    pool: Sequence[tuple[Trajectory, float]], plan: CurationPlan
) -> list[Trajectory]:
    return curate_with_report(pool, plan)[0]
