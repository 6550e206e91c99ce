"""File plumbing: the trajectory container format, JSONL, key-value configs
and atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import InputError
from .trajectory import Mode, Trajectory, parse_trajectory


@dataclass
class ContainerRecord:
    problem_id: str
    mode: Mode
    raw_text: str
    metadata: dict = field(default_factory=dict)
    line: int = 0

    def to_json(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "mode": self.mode.value,
            "raw_text": self.raw_text,
            "metadata": self.metadata,
        }

    def parse(self, **kwargs) -> Trajectory:
        return parse_trajectory(self.raw_text, self.mode, self.problem_id, **kwargs)


def read_container(path: str | Path) -> Iterator[ContainerRecord]:
    """Yield one record per non-blank line of a trajectory container file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield ContainerRecord(
                    problem_id=str(obj["problem_id"]),
                    mode=Mode(obj.get("mode", Mode.AGENTIC.value)),
                    raw_text=obj["raw_text"],
                    metadata=obj.get("metadata") or {},
                    line=lineno,
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: bad container record: {exc}") from exc


def record_for(t: Trajectory, metadata: dict | None = None) -> ContainerRecord:
    return ContainerRecord(t.problem_id, t.mode, t.text, metadata or {})


def dumps_line(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=False) + "\n"


def write_atomic(path: str | Path, text: str) -> None:
    """Write via temp-file-and-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | Path, rows: Iterable[Any]) -> None:
    write_atomic(path, "".join(dumps_line(r) for r in rows))


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise InputError(f"{path}:{lineno}: {exc}") from exc
    return rows


def parse_scalar(raw: str) -> Any:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def read_kv(path: str | Path) -> dict[str, Any]:
    """Read a ``key = value`` file; ``#`` starts a comment line.

    Keys may be quoted (tag literals contain no ``=``).  Values are coerced
    to bool/int/float when they parse as such.
    """
    out: dict[str, Any] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.rpartition("=")
            if not sep or not key.strip():
                raise InputError(f"{path}:{lineno}: expected 'key = value'")
            out[parse_scalar(key)] = parse_scalar(value)
    return out


def read_lines(path: str | Path) -> list[str]:
    """One entry per non-blank line, e.g. a phrase lexicon."""
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
