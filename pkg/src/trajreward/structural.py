"""Tag-based structural reward.

Three components, all computed on raw text so that malformed model output
still gets a score:

* ``<step>`` position: ``1 - offset/len`` for the first occurrence, in bytes.
* presence bonuses for the other tags, each counted once.
* compound bonuses for contiguous tag sequences such as
  ``<stop_analysis><answer>`` (whitespace between the tags allowed).

The total is the component sum divided by the best achievable sum, clamped
to [0, 1].
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import EmptyInput, InputError
from .io import read_kv

STEP_TAG = "<step>"

DEFAULT_TAG_BONUSES: dict[str, float] = {
    "<thought>": 0.8,
    "<action>": 0.6,
    "<action_input>": 0.4,
    "</step>": 0.2,
    "<stop_analysis>": 0.6,
}
DEFAULT_COMPOUND_BONUS = 0.15
DEFAULT_COMPOUNDS: tuple[tuple[str, ...], ...] = (
    ("<stop_analysis>", "<thought>"),
    ("<stop_analysis>", "<answer>"),
)

_TAG_SPLIT = re.compile(r"<[^<>]+>")


@dataclass(frozen=True)
class TagBonusTable:
    bonuses: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TAG_BONUSES))
    compounds: Mapping[tuple[str, ...], float] = field(
        default_factory=lambda: {c: DEFAULT_COMPOUND_BONUS for c in DEFAULT_COMPOUNDS}
    )

    def __post_init__(self):
        for key, v in [*self.bonuses.items(), *self.compounds.items()]:
            if not (math.isfinite(v) and v >= 0):
                raise InputError(f"bonus for {key!r} must be finite and non-negative, got {v}")
        pats = {
            seq: re.compile(r"\s*".join(re.escape(tag) for tag in seq)) for seq in self.compounds
        }
        object.__setattr__(self, "_compound_patterns", pats)

    @property
    def normalizer(self) -> float:
        """Score of a perfect response: step at offset 0, every bonus earned."""
        return 1.0 + math.fsum(self.bonuses.values()) + math.fsum(self.compounds.values())

    @classmethod
    def from_file(cls, path: str | Path) -> "TagBonusTable":
        """Load overrides from a ``"<tag>" = value`` file.

        Keys made of two or more tags (``"<stop_analysis><answer>"``) are
        compounds; ``compound_bonus`` sets the value of the default compounds.
        Absent keys keep their defaults.
        """
        raw = read_kv(path)
        bonuses = dict(DEFAULT_TAG_BONUSES)
        default_compound = float(raw.pop("compound_bonus", DEFAULT_COMPOUND_BONUS))
        compounds = {c: default_compound for c in DEFAULT_COMPOUNDS}
        for key, value in raw.items():
            tags = _TAG_SPLIT.findall(key)
            if "".join(tags) != key or not tags:
                raise InputError(f"{path}: {key!r} is not a tag literal")
            if len(tags) == 1:
                bonuses[key] = float(value)
            else:
                compounds[tuple(tags)] = float(value)
        return cls(bonuses, compounds)


DEFAULT_TABLE = TagBonusTable()


@dataclass(frozen=True)
class StructuralScore:
    step_score: float
    presence_total: float
    compound_total: float
    total: float


def step_position_score(text: str) -> float:
    data = text.encode("utf-8")
    if not data:
        raise EmptyInput("structural reward of empty text")
    pos = data.find(STEP_TAG.encode())
    if pos < 0:
        return 0.0
    return 1.0 - pos / len(data)


def presence_bonus(text: str, table: TagBonusTable = DEFAULT_TABLE) -> float:
    return math.fsum(bonus for tag, bonus in table.bonuses.items() if tag in text)


def compound_bonus(text: str, table: TagBonusTable = DEFAULT_TABLE) -> float:
    pats = table._compound_patterns  # type: ignore[attr-defined]
    return math.fsum(bonus for seq, bonus in table.compounds.items() if pats[seq].search(text))


def structural_reward(text: str, table: TagBonusTable = DEFAULT_TABLE) -> StructuralScore:
    step = step_position_score(text)
    presence = presence_bonus(text, table)
    compound = compound_bonus(text, table)
    total = (step + presence + compound) / table.normalizer
    return StructuralScore(step, presence, compound, min(1.0, max(0.0, total)))
