"""Synthetic trajectory generators for fixtures, fuzzing and experiments.

Texts are built directly as strings (not through the serializer) so that
parser round-trip tests exercise markup the serializer never produced:
irregular whitespace, unknown tags, stray angle brackets, unicode.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .trajectory import Mode, StepRecord, Trajectory

_TOPICS = [
    "the price column", "patient heart rate", "daily returns", "the residual plot",
    "eigenvalues of the matrix", "missing values", "the survival curve", "transaction volume",
    "the convergence rate", "quarterly revenue", "the adjacency list", "sensor drift",
]
_VERBS = ["inspect", "summarise", "plot", "normalise", "aggregate", "test", "fit", "compare"]
_CODE = [
    "df.head()", "df.describe()", "df['price'].mean()", "np.linalg.eigvals(A)",
    "df.groupby('day').sum()", "plt.hist(df['hr'])\nplt.show()", "model.fit(X, y)",
    "for i in range(3):\n    print(i ** 2)", "x = [1, 2, 3]\nprint(x[5])",
]
_OK_OBS = [
    "   price  volume\n0   1.20     300\n1   1.25     310",
    "mean = 4.2, std = 1.1", "shape: (100, 4)", "array([3.2, 1.1, 0.4])",
    "<Figure size 640x480 with 1 Axes>", "R² = 0.93 ✓", "", "0\n1\n4",
]
_ERR_OBS = [
    "Traceback (most recent call last):\n  File \"<stdin>\", line 1, in <module>\nKeyError: 'price'",
    "Traceback (most recent call last):\n  File \"cell.py\", line 2\nIndexError: list index out of range",
    "ValueError: could not convert string to float: 'n/a'",
    "KeyError: 'volume'",
]
_NOISE = ["", "\n", "\n\n", "  ", "\n  ", "\t", " <br> ", "\n<!-- cell -->\n", " a < b > c ", "<step >", "< /step>"]
_TAGLIKE = ["<b>bold</b>", "x<y and y>z", "<div>", "</stop_analysis>", "<Step>", "→ next"]


def _pick(rng: random.Random, xs):
    return xs[rng.randrange(len(xs))]


def _thought(rng: random.Random) -> str:
    s = f"I will {_pick(rng, _VERBS)} {_pick(rng, _TOPICS)}"
    if rng.random() < 0.3:
        s += f" and then {_pick(rng, _VERBS)} {_pick(rng, _TOPICS)}"
    if rng.random() < 0.15:
        s += " " + _pick(rng, _TAGLIKE)
    if rng.random() < 0.2:
        s = "\n" + s + ".\n"
    return s


def _step_text(rng: random.Random, error: bool, thought: str | None = None) -> str:
    gap = lambda: _pick(rng, _NOISE) if rng.random() < 0.4 else ""
    parts = ["<step>", gap(), f"<thought>{thought if thought is not None else _thought(rng)}</thought>", gap()]
    parts += ["<action>python</action>", gap(), f"<action_input>{_pick(rng, _CODE)}</action_input>", gap()]
    obs = _pick(rng, _ERR_OBS) if error else _pick(rng, _OK_OBS)
    parts += [f"<observation>{obs}</observation>", gap(), "</step>"]
    return "".join(parts)


def _ending(rng: random.Random) -> str:
    answer = f"<answer>{_pick(rng, _TOPICS).capitalize()} looks stable.</answer>"
    choice = rng.random()
    if choice < 0.4:
        return "<stop_analysis>" + answer
    if choice < 0.6:
        return "<stop_analysis>\n" + answer
    if choice < 0.8:
        return "<stop_analysis><thought>Enough evidence collected.</thought>" + answer
    return "\n" + answer


@dataclass(frozen=True)
class GoldenRecord:
    problem_id: str
    mode: Mode
    raw_text: str
    category: str  # intended category, known by construction


def golden_record(rng: random.Random, index: int) -> GoldenRecord:
    """One trajectory text with a category fixed by construction."""
    pid = f"p{index // 3:04d}"
    kind = rng.choices(
        ["success", "error_correction", "self_correction", "persistent_failure", "reflection"],
        weights=[30, 25, 12, 13, 20],
    )[0]
    pre = _pick(rng, ["", "", "Analysis notebook\n", "\n", "# Scenario: retail churn\n"])
    if kind == "reflection":
        paras = "\n\n".join(_thought(rng).strip() for _ in range(rng.randint(1, 4)))
        text = f"{pre}<think>{paras}</think>{_pick(rng, ['', chr(10)])}<answer>{rng.randint(0, 99)}</answer>"
        return GoldenRecord(pid, Mode.REFLECTION, text, "success")

    steps: list[str] = []
    if kind == "success":
        steps = [_step_text(rng, False) for _ in range(rng.randint(1, 5))]
        ending = _ending(rng)
    elif kind == "error_correction":
        steps = [_step_text(rng, False) for _ in range(rng.randint(0, 2))]
        steps += [_step_text(rng, True) for _ in range(rng.randint(1, 2))]
        steps += [_step_text(rng, False) for _ in range(rng.randint(1, 3))]
        ending = _pick(rng, [_ending(rng), ""])
    elif kind == "self_correction":
        steps = [_step_text(rng, False) for _ in range(rng.randint(1, 3))]
        fix = "I made a mistake in the aggregation above; correcting the group key."
        steps.append(_step_text(rng, False, thought=fix))
        ending = _pick(rng, [_ending(rng), ""])
    else:
        steps = [_step_text(rng, False) for _ in range(rng.randint(0, 3))]
        steps += [_step_text(rng, True) for _ in range(rng.randint(1, 3))]
        ending = _pick(rng, ["", "\n"])
    sep = _pick(rng, ["", "\n", "\n\n"])
    text = pre + sep.join(steps) + ending
    return GoldenRecord(pid, Mode.AGENTIC, text, kind)


def golden_corpus(n: int = 1000, seed: int = 20240814) -> list[GoldenRecord]:
    rng = random.Random(seed)
    return [golden_record(rng, i) for i in range(n)]


# ---------------------------------------------------------------------------
# fuzzing and the length/overthinking pool

FILLERS = ["let me check again", "wait", "hmm", "let me re-examine", "on second thought"]
_WORDS = (
    "the mean of column a b c check plot value data series error rate model fit test "
    "sample size group compute again result looks off maybe try other approach"
).split()


def fuzz_segment(rng: random.Random) -> str:
    n = rng.randint(0, 40)
    toks = [_pick(rng, _WORDS) for _ in range(n)]
    for _ in range(rng.randint(0, 3)):
        toks.insert(rng.randint(0, len(toks)), _pick(rng, FILLERS))
    sep = _pick(rng, [" ", "  ", "\n", ", "])
    return sep.join(toks)


def fuzz_trajectory(rng: random.Random, index: int = 0) -> Trajectory:
    segs: list[str] = []
    for _ in range(rng.randint(0, 8)):
        if segs and rng.random() < 0.3:
            segs.append(_pick(rng, segs))
        else:
            segs.append(fuzz_segment(rng))
    if rng.random() < 0.5 or not segs:
        steps = tuple(StepRecord(index=i + 1, thought=s) for i, s in enumerate(segs or [""]))
        return Trajectory(steps=steps, problem_id=f"f{index}")
    return Trajectory(mode=Mode.REFLECTION, thoughts=("\n\n".join(segs),), answer="42", problem_id=f"f{index}")


def verbose_trajectory(rng: random.Random, verbosity: float, index: int) -> Trajectory:
    """Trajectory whose length and redundancy both grow with ``verbosity`` in [0, 1].

    Fresh reasoning segments are drawn from a wide vocabulary; verbose ones
    add restated segments and filler phrases.
    """
    n_fresh = rng.randint(2, 4)
    segs = []
    for k in range(n_fresh):
        topic = _pick(rng, _TOPICS)
        segs.append(f"step {k}: {_pick(rng, _VERBS)} {topic} using method {rng.randint(0, 10**6)}")
    extra = int(round(verbosity * rng.uniform(4, 12)))
    for _ in range(extra):
        base = _pick(rng, segs[:n_fresh])
        filler = _pick(rng, FILLERS) if rng.random() < verbosity else ""
        segs.append(f"{filler} {base} again".strip())
    steps = tuple(StepRecord(index=i + 1, thought=s) for i, s in enumerate(segs))
    return Trajectory(steps=steps, problem_id=f"v{index:05d}")
