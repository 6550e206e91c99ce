"""Trajectory data model and the tag parser/serializer.

The wire format is the XML-like notebook markup::

    <step><thought>..</thought><action>python</action>
    <action_input>..</action_input><observation>..</observation></step>
    <stop_analysis><answer>..</answer>

Reflection traces use ``<think>``/``<answer>``; ``<think>`` is an alias of
``<thought>``.  Parsing is lossless: every byte that is not a recognised tag
(including whitespace between tags and unknown ``<...>`` fragments) is kept
in a layout so that ``serialize_trajectory(parse_trajectory(text)) == text``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import EmptyInput, InvalidTrajectory, MalformedTag


class TagKind(enum.Enum):
    STEP = "<step>"
    THOUGHT = "<thought>"
    ACTION = "<action>"
    ACTION_INPUT = "<action_input>"
    OBSERVATION = "<observation>"
    STOP_ANALYSIS = "<stop_analysis>"
    ANSWER = "<answer>"
    STEP_CLOSE = "</step>"

    @property
    def literal(self) -> str:
        return self.value


# alias surface forms accepted on input
TAG_ALIASES = {"<think>": TagKind.THOUGHT}


class Mode(str, enum.Enum):
    AGENTIC = "agentic"
    REFLECTION = "reflection"


class Outcome(str, enum.Enum):
    OK = "ok"
    ERROR = "error"
    NO_EXECUTION = "no_execution"


class TerminationReason(str, enum.Enum):
    PERSISTENT_ERROR = "persistent_error"
    MAX_STEPS = "max_steps"
    SELF_TERMINATION = "self_termination"
    NOT_TERMINATED = "not_terminated"


DEFAULT_ERROR_SIGNATURES: tuple[str, ...] = (
    "Traceback",
    "Error:",
    "Exception",
    "KeyError",
    "ValueError",
    "IndexError",
)
_TRACEBACK_MARKER = "most recent call last"

DEFAULT_MAX_STEPS = 50
DEFAULT_MAX_CONSECUTIVE_ERRORS = 3
DEFAULT_MIN_STEPS_BEFORE_STOP = 0

_FIELDS = ("thought", "action", "action_input", "observation")


@dataclass(frozen=True)
class _Ref:
    """Placeholder inside a layout pointing at structured content."""

    kind: str  # "step" | "thought" | "action" | "action_input" | "observation" | "answer" | "stop"
    index: int = 0
    surface: str = ""  # tag name actually used, e.g. "think" for an aliased thought


def classify_step_outcome(
    observation: str | None, signatures: Sequence[str] = DEFAULT_ERROR_SIGNATURES
) -> Outcome:
    """Classify an observation as Ok / Error / NoExecution.

    A signature matches when it starts a line (leading whitespace ignored) or
    appears anywhere after a ``most recent call last`` marker.
    """
    if observation is None:
        return Outcome.NO_EXECUTION
    for line in observation.splitlines():
        stripped = line.lstrip()
        if any(stripped.startswith(sig) for sig in signatures):
            return Outcome.ERROR
    pos = observation.find(_TRACEBACK_MARKER)
    if pos >= 0:
        tail = observation[pos + len(_TRACEBACK_MARKER):]
        if any(sig in tail for sig in signatures):
            return Outcome.ERROR
    return Outcome.OK


@dataclass(frozen=True)
class StepRecord:
    index: int
    thought: str = ""
    action: str | None = None
    action_input: str | None = None
    observation: str | None = None
    outcome: Outcome | None = None
    layout: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.action_input is not None and self.action is None:
            raise InvalidTrajectory(f"step {self.index}: action_input without action")
        if self.outcome is None:
            object.__setattr__(self, "outcome", classify_step_outcome(self.observation))

    @property
    def is_error(self) -> bool:
        return self.outcome is Outcome.ERROR


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[StepRecord, ...] = ()
    mode: Mode = Mode.AGENTIC
    problem_id: str = ""
    stop_emitted: bool = False
    answer: str | None = None
    # thought/think blocks outside any <step> (reflection traces, or a
    # "<stop_analysis><thought>" conclusion)
    thoughts: tuple[str, ...] = ()
    raw_text: str = field(default="", compare=False, repr=False)
    layout: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "thoughts", tuple(self.thoughts))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode is Mode.AGENTIC and not self.steps:
            raise InvalidTrajectory("agentic trajectory has no <step> blocks")
        if self.mode is Mode.REFLECTION and self.answer is None:
            raise InvalidTrajectory("reflection trajectory has no <answer>")

    @property
    def outcomes(self) -> tuple[Outcome, ...]:
        return tuple(s.outcome for s in self.steps)

    @property
    def error_count(self) -> int:
        return sum(1 for s in self.steps if s.is_error)

    @property
    def ends_in_error(self) -> bool:
        return bool(self.steps) and self.steps[-1].is_error

    @property
    def text(self) -> str:
        return self.raw_text or serialize_trajectory(self)


@dataclass(frozen=True)
class TerminationVerdict:
    reason: TerminationReason
    at_step: int


# ---------------------------------------------------------------------------
# tokenizer

_TAG_RE = re.compile(
    r"<(/?)(step|thought|think|action_input|action|observation|answer)>|<stop_analysis>"
)


def _tokens(text: str) -> list[tuple[str, str, int]]:
    """Split into ("text", s, offset) and ("tag", literal, offset) tokens."""
    out = []
    pos = 0
    for m in _TAG_RE.finditer(text):
        if m.start() > pos:
            out.append(("text", text[pos:m.start()], pos))
        out.append(("tag", m.group(0), m.start()))
        pos = m.end()
    if pos < len(text):
        out.append(("text", text[pos:], pos))
    return out


def _tag_name(literal: str) -> str:
    return literal.strip("</>")


class _Parser:
    def __init__(self, text: str, signatures: Sequence[str]):
        self.text = text
        self.toks = _tokens(text)
        self.i = 0
        self.signatures = signatures

    def _next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def _at_end(self) -> bool:
        return self.i >= len(self.toks)

    def element(self, name: str, start: int) -> str:
        """Consume the content of an opened element up to its closer."""
        closer = f"</{name}>"
        parts = []
        while not self._at_end():
            kind, val, off = self._next()
            if kind == "tag" and val == closer:
                return "".join(parts)
            if kind == "tag" and val == "<step>":
                raise MalformedTag(f"<{name}> not closed before <step>", off)
            parts.append(val)
        raise MalformedTag(f"<{name}> never closed", start)

    def step(self, index: int, start: int) -> StepRecord:
        values: dict[str, str] = {}
        layout: list = []
        while not self._at_end():
            kind, val, off = self._next()
            if kind == "text":
                _append_text(layout, val)
                continue
            if val == "</step>":
                return StepRecord(
                    index=index,
                    thought=values.get("thought", ""),
                    action=values.get("action"),
                    action_input=values.get("action_input"),
                    observation=values.get("observation"),
                    outcome=classify_step_outcome(values.get("observation"), self.signatures),
                    layout=tuple(layout),
                )
            if val in ("<step>", "<stop_analysis>", "<answer>"):
                raise MalformedTag(f"<step> not closed before {val}", off)
            name = _tag_name(val)
            if val.startswith("</"):
                _append_text(layout, val)
                continue
            field_name = "thought" if name == "think" else name
            if field_name in values:
                raise MalformedTag(f"duplicate <{field_name}> in step {index}", off)
            values[field_name] = self.element(name, off)
            layout.append(_Ref(field_name, surface=name))
        raise MalformedTag("<step> never closed", start)

    def document(self, mode: Mode, problem_id: str) -> Trajectory:
        steps: list[StepRecord] = []
        thoughts: list[str] = []
        answer = None
        stop = False
        layout: list = []
        while not self._at_end():
            kind, val, off = self._next()
            if kind == "text":
                _append_text(layout, val)
            elif val == "<step>":
                if stop:
                    raise MalformedTag("<step> after <stop_analysis>", off)
                steps.append(self.step(len(steps) + 1, off))
                layout.append(_Ref("step", len(steps) - 1))
            elif val == "<stop_analysis>":
                if stop:
                    raise MalformedTag("duplicate <stop_analysis>", off)
                stop = True
                layout.append(_Ref("stop"))
            elif val in ("<thought>", "<think>"):
                name = _tag_name(val)
                thoughts.append(self.element(name, off))
                layout.append(_Ref("thought", len(thoughts) - 1, name))
            elif val == "<answer>":
                if answer is not None:
                    raise MalformedTag("duplicate <answer>", off)
                answer = self.element("answer", off)
                layout.append(_Ref("answer"))
            else:
                # closers and step-only tags at top level carry no structure
                _append_text(layout, val)
        return Trajectory(
            steps=tuple(steps),
            mode=mode,
            problem_id=problem_id,
            stop_emitted=stop,
            answer=answer,
            thoughts=tuple(thoughts),
            raw_text=self.text,
            layout=tuple(layout),
        )


def _append_text(layout: list, s: str) -> None:
    if layout and isinstance(layout[-1], str):
        layout[-1] += s
    else:
        layout.append(s)


def parse_trajectory(
    text: str,
    mode: Mode | str = Mode.AGENTIC,
    problem_id: str = "",
    signatures: Sequence[str] = DEFAULT_ERROR_SIGNATURES,
) -> Trajectory:
    """Parse tagged text into a :class:`Trajectory`.

    Raises:
        EmptyInput: ``text`` is empty.
        MalformedTag: a recognised element is left open, a ``<step>`` is
            nested, or a singleton (stop marker, answer, step field) repeats.
        InvalidTrajectory: the result breaks a mode invariant (agentic with
            no steps, reflection with no answer).
    """
    if not text:
        raise EmptyInput("empty trajectory text")
    return _Parser(text, signatures).document(Mode(mode), problem_id)


# ---------------------------------------------------------------------------
# serialization


def _wrap(name: str, content: str) -> str:
    return f"<{name}>{content}</{name}>"


def _serialize_step(step: StepRecord, mode: Mode) -> str:
    values = {
        "thought": step.thought,
        "action": step.action,
        "action_input": step.action_input,
        "observation": step.observation,
    }
    if step.layout:
        out = []
        for item in step.layout:
            if isinstance(item, str):
                out.append(item)
            else:
                out.append(_wrap(item.surface, values[item.kind] or ""))
        return "<step>" + "".join(out) + "</step>"
    thought_tag = "think" if mode is Mode.REFLECTION else "thought"
    out = [_wrap(thought_tag, step.thought)]
    for name in _FIELDS[1:]:
        if values[name] is not None:
            out.append(_wrap(name, values[name]))
    return "<step>" + "".join(out) + "</step>"


def serialize_trajectory(t: Trajectory) -> str:
    """Render a trajectory back to tagged text.

    Parsed trajectories replay their recorded layout; constructed ones use a
    canonical order with the mode's native thought tag.
    """
    if t.layout:
        out = []
        for item in t.layout:
            if isinstance(item, str):
                out.append(item)
            elif item.kind == "step":
                out.append(_serialize_step(t.steps[item.index], t.mode))
            elif item.kind == "stop":
                out.append(TagKind.STOP_ANALYSIS.literal)
            elif item.kind == "thought":
                out.append(_wrap(item.surface, t.thoughts[item.index]))
            elif item.kind == "answer":
                out.append(_wrap("answer", t.answer or ""))
        return "".join(out)

    thought_tag = "think" if t.mode is Mode.REFLECTION else "thought"
    thoughts = "".join(_wrap(thought_tag, th) for th in t.thoughts)
    steps = "".join(_serialize_step(s, t.mode) for s in t.steps)
    stop = TagKind.STOP_ANALYSIS.literal if t.stop_emitted else ""
    answer = _wrap("answer", t.answer) if t.answer is not None else ""
    if t.mode is Mode.REFLECTION:
        return thoughts + steps + stop + answer
    return steps + stop + thoughts + answer


def make_trajectory(
    outcomes: Iterable[Outcome | str],
    *,
    mode: Mode = Mode.AGENTIC,
    problem_id: str = "",
    answer: str | None = None,
    stop_emitted: bool = False,
    thoughts: Sequence[str] | None = None,
) -> Trajectory:
    """Build a trajectory whose steps have the given outcomes.

    Handy for fixtures: observations are synthesised so that parsing the
    serialized text reproduces the same outcomes.
    """
    steps = []
    for i, oc in enumerate(outcomes, start=1):
        oc = Outcome(oc)
        thought = thoughts[i - 1] if thoughts is not None else f"step {i}"
        if oc is Outcome.NO_EXECUTION:
            steps.append(StepRecord(index=i, thought=thought))
            continue
        obs = (
            "Traceback (most recent call last):\nKeyError: 'col'"
            if oc is Outcome.ERROR
            else "ok"
        )
        steps.append(
            StepRecord(index=i, thought=thought, action="python", action_input="x = 1", observation=obs)
        )
    return Trajectory(
        steps=tuple(steps),
        mode=mode,
        problem_id=problem_id,
        stop_emitted=stop_emitted,
        answer=answer,
    )


# ---------------------------------------------------------------------------
# termination


def check_termination(
    t: Trajectory,
    max_steps: int = DEFAULT_MAX_STEPS,
    max_consecutive_errors: int = DEFAULT_MAX_CONSECUTIVE_ERRORS,
    min_steps_before_stop: int = DEFAULT_MIN_STEPS_BEFORE_STOP,
) -> TerminationVerdict:
    """Decide which analysis-loop termination condition, if any, holds.

    Priority when several hold: self-termination, persistent error, max steps.
    ``at_step`` is the 1-based ordinal of the last step (equal to the step
    count).
    """
    if max_steps < 1 or max_consecutive_errors < 1 or min_steps_before_stop < 0:
        raise ValueError("termination limits out of range")
    n = len(t.steps)
    if t.stop_emitted and n >= min_steps_before_stop:
        return TerminationVerdict(TerminationReason.SELF_TERMINATION, n)
    tail = t.steps[-max_consecutive_errors:]
    if n >= max_consecutive_errors and all(s.is_error for s in tail):
        return TerminationVerdict(TerminationReason.PERSISTENT_ERROR, n)
    if n >= max_steps:
        return TerminationVerdict(TerminationReason.MAX_STEPS, n)
    return TerminationVerdict(TerminationReason.NOT_TERMINATED, n)
