"""Group-relative policy optimisation, numeric kernel only.

Everything works on per-token log-probabilities that the caller already
computed; there are no parameters and no autograd here.  The group loss is
computed in two passes (rewards to advantages, then one sample at a time)
so working memory stays at one sample regardless of group size.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import GroupTooSmall, InvalidSample, LengthMismatch

DEFAULT_CLIP_EPSILON = 0.2
DEFAULT_DELTA_CLAMP = 4.0
DEFAULT_KL_COEFFICIENT = 0.04
DEFAULT_TOKEN_GRAD_CLIP = 5.0
DEFAULT_STD_EPSILON = 1e-6


@dataclass(frozen=True)
class GrpoConfig:
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    delta_clamp: float = DEFAULT_DELTA_CLAMP
    kl_coefficient: float = DEFAULT_KL_COEFFICIENT
    token_grad_clip: float = DEFAULT_TOKEN_GRAD_CLIP
    std_epsilon: float = DEFAULT_STD_EPSILON
    kl_estimator: str = "k3"  # or "naive"

    def __post_init__(self):
        if self.clip_epsilon <= 0 or self.delta_clamp <= 0:
            raise ValueError("clip_epsilon and delta_clamp must be positive")
        if self.kl_coefficient < 0 or self.token_grad_clip <= 0 or self.std_epsilon <= 0:
            raise ValueError("kl_coefficient >= 0, token_grad_clip > 0, std_epsilon > 0 required")
        if self.kl_estimator not in ("k3", "naive"):
            raise ValueError(f"unknown kl_estimator {self.kl_estimator!r}")


@dataclass(frozen=True)
class GroupSample:
    completion_tokens: Sequence[int]
    logp_policy: Sequence[float]
    logp_old: Sequence[float]
    logp_ref: Sequence[float]
    reward: float

    def __post_init__(self):
        n = len(self.completion_tokens)
        if n < 1:
            raise InvalidSample("sample has no completion tokens")
        for name in ("logp_policy", "logp_old", "logp_ref"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise InvalidSample(f"{name} has {len(arr)} entries for {n} tokens")
            if not all(math.isfinite(x) and x <= 0.0 for x in arr):
                raise InvalidSample(f"{name} must be finite and <= 0")
        if not math.isfinite(self.reward):
            raise InvalidSample("reward must be finite")

    @classmethod
    def from_json(cls, obj: dict) -> "GroupSample":
        return cls(
            [int(x) for x in obj["completion_tokens"]],
            [float(x) for x in obj["logp_policy"]],
            [float(x) for x in obj["logp_old"]],
            [float(x) for x in obj["logp_ref"]],
            float(obj["reward"]),
        )


def group_advantages(rewards: Sequence[float], std_epsilon: float = DEFAULT_STD_EPSILON) -> list[float]:
    """(r - mean) / (population std + eps); all zeros for a constant group."""
    if len(rewards) < 2:
        raise GroupTooSmall(f"group of {len(rewards)} rewards; need at least 2")
    r = np.asarray(rewards, dtype=np.float64)
    if np.all(r == r[0]):
        return [0.0] * len(r)
    centered = r - r.mean()
    std = np.sqrt(np.mean(centered * centered))
    return (centered / (std + std_epsilon)).tolist()


def clamped_ratio(logp_policy_t, logp_old_t, delta_clamp: float = DEFAULT_DELTA_CLAMP):
    """exp of the clamped log-ratio; works on scalars and arrays."""
    delta = np.clip(np.subtract(logp_policy_t, logp_old_t), -delta_clamp, delta_clamp)
    out = np.exp(delta)
    return float(out) if np.ndim(out) == 0 else out


def kl_term(logp_policy_t, logp_ref_t, estimator: str = "k3"):
    """Per-token KL(policy || ref) estimate.

    ``k3`` is exp(d) - d - 1 with d = ref - policy, which is never negative;
    ``naive`` is policy - ref.
    """
    if estimator == "naive":
        out = np.subtract(logp_policy_t, logp_ref_t)
    else:
        d = np.subtract(logp_ref_t, logp_policy_t)
        out = np.expm1(d) - d
    return float(out) if np.ndim(out) == 0 else out


def align_next_token(logprob_rows, token_ids: Sequence[int]) -> np.ndarray:
    """Pick log p(token[t+1] | prefix up to t) out of per-position rows.

    Row t is the distribution predicted at position t, so it is scored
    against the *next* token; the last row predicts past the sequence and
    is dropped.
    """
    rows = np.asarray(logprob_rows, dtype=np.float64)
    ids = np.asarray(token_ids, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[0] != ids.shape[0]:
        raise LengthMismatch(f"{rows.shape[0] if rows.ndim else 0} rows for {ids.shape[0]} tokens")
    if ids.shape[0] < 2:
        return np.empty(0, dtype=np.float64)
    nxt = ids[1:]
    if nxt.min() < 0 or nxt.max() >= rows.shape[1]:
        raise LengthMismatch("token id outside the vocabulary of the rows")
    return rows[np.arange(len(nxt)), nxt]


@dataclass
class GroupDiagnostics:
    mean_ratio: float = 0.0
    clip_fraction: float = 0.0
    mean_kl: float = 0.0
    delta_clamp_hits: int = 0
    token_clip_hits: int = 0
    degenerate_group: bool = False

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class LossAccumulator:
    """Streams samples of one group into the per-token mean loss."""

    config: GrpoConfig = field(default_factory=GrpoConfig)
    tokens: int = 0
    objective_sum: float = 0.0
    ratio_sum: float = 0.0
    kl_sum: float = 0.0
    clipped: int = 0
    delta_hits: int = 0
    token_hits: int = 0

    def add(self, sample: GroupSample, advantage: float) -> None:
        cfg = self.config
        pol = np.asarray(sample.logp_policy, dtype=np.float64)
        old = np.asarray(sample.logp_old, dtype=np.float64)
        ref = np.asarray(sample.logp_ref, dtype=np.float64)

        delta = pol - old
        ratio = clamped_ratio(pol, old, cfg.delta_clamp)
        clipped_ratio = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
        surrogate = np.minimum(ratio * advantage, clipped_ratio * advantage)
        kl = kl_term(pol, ref, cfg.kl_estimator)
        per_token = surrogate - cfg.kl_coefficient * kl

        over = np.abs(per_token) > cfg.token_grad_clip
        per_token = np.clip(per_token, -cfg.token_grad_clip, cfg.token_grad_clip)

        self.tokens += pol.size
        self.objective_sum += float(per_token.sum())
        self.ratio_sum += float(ratio.sum())
        self.kl_sum += float(kl.sum())
        self.clipped += int(np.count_nonzero(np.abs(ratio - 1.0) > cfg.clip_epsilon))
        self.delta_hits += int(np.count_nonzero(np.abs(delta) > cfg.delta_clamp))
        self.token_hits += int(np.count_nonzero(over))

    def finalize(self, degenerate: bool = False) -> tuple[float, GroupDiagnostics]:
        n = self.tokens
        diag = GroupDiagnostics(
            mean_ratio=self.ratio_sum / n,
            clip_fraction=self.clipped / n,
            mean_kl=self.kl_sum / n,
            delta_clamp_hits=self.delta_hits,
            token_clip_hits=self.token_hits,
            degenerate_group=degenerate,
        )
        return -self.objective_sum / n, diag


def grpo_group_loss(
    samples: Iterable[GroupSample], config: GrpoConfig = GrpoConfig()
) -> tuple[float, GroupDiagnostics]:
    """Clipped-surrogate GRPO loss for one group, averaged over all tokens.

    A group whose rewards are all equal has zero advantages; its loss is the
    KL term alone and ``diagnostics.degenerate_group`` is set.
    """
    samples = list(samples)
    rewards = [s.reward for s in samples]
    advantages = group_advantages(rewards, config.std_epsilon)
    degenerate = all(r == rewards[0] for r in rewards)
    acc = LossAccumulator(config)
    for sample, adv in zip(samples, advantages):
        acc.add(sample, adv)
    return acc.finalize(degenerate)
