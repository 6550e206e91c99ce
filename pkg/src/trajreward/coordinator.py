"""Deterministic simulator of the distributed generation protocol.

Logical ranks filter prompts against the context window, gather the valid
ones to rank 0, rank 0 drives a mock generation service, and completions
scatter back with empty fills for skipped slots.  Checkpoint swaps requested
while generations are in flight are deferred until those generations finish.

Everything runs on one thread as an event loop over per-rank FIFO inboxes;
the trace is the total order of what happened.
"""

from __future__ import annotations

import enum
import hashlib
import random
from collections import defaultdict, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .errors import InputError, ServiceFailure, SwapRejected
from .io import dumps_line, read_kv

EMPTY_COMPLETION = ""
RANK0 = 0
SERVICE = -1  # sender id of the generation service


class SlotStatus(str, enum.Enum):
    VALID = "valid"
    SKIPPED = "skipped"


class MessageKind(str, enum.Enum):
    FILTER_REPORT = "filter_report"
    GATHER = "gather"
    SCATTER = "scatter"
    SWAP_REQUEST = "swap_request"
    SWAP_ACK = "swap_ack"


class SwapPolicy(str, enum.Enum):
    DEFER = "defer"  # apply after the round's scatter
    DRAIN = "drain"  # apply as soon as in-flight requests finish, before scatter


@dataclass(frozen=True)
class PromptSlot:
    rank: int
    slot_index: int
    prompt_tokens: int
    status: SlotStatus | None = None


def filter_prompts(
    slots: Sequence[PromptSlot], context_window: int, reserved_completion: int
) -> list[PromptSlot]:
    """Mark slots that leave no room for a completion as skipped."""
    if not 0 < reserved_completion < context_window:
        raise ValueError("need 0 < reserved_completion < context_window")
    out = []
    for s in slots:
        skip = s.prompt_tokens + reserved_completion > context_window
        out.append(
            PromptSlot(s.rank, s.slot_index, s.prompt_tokens, SlotStatus.SKIPPED if skip else SlotStatus.VALID)
        )
    return out


@dataclass(frozen=True)
class CoordinatorMessage:
    kind: MessageKind
    sender: int
    receiver: int
    sequence: int
    round: int
    payload: Any = None


@dataclass(frozen=True)
class Completion:
    rank: int
    slot_index: int
    round: int
    text: str
    checkpoint_id: str | None

    @property
    def empty(self) -> bool:
        return self.checkpoint_id is None


@dataclass(frozen=True)
class TraceEvent:
    sequence: int
    kind: str
    rank: int | None
    round: int
    slot: int | None
    checkpoint_id: str | None
    detail: Any = None

    def to_json(self) -> dict:
        return asdict(self)


class MockGenerationService:
    """Generation backend whose output is a pure function of
    (seed, checkpoint, round, rank, slot), so attribution is visible."""

    def __init__(self, checkpoint_id: str = "ckpt-0", fail_rounds: Sequence[int] = ()):
        self.checkpoint_id = checkpoint_id
        self.pending_checkpoint: str | None = None
        self.fail_rounds = set(fail_rounds)
        self.calls = 0
        self._queue: deque = deque()
        self._round = 0
        self._seed = 0
        self._submitted = 0

    @property
    def in_flight(self) -> int:
        return len(self._queue)

    def submit(self, requests: Sequence[tuple[int, int]], round: int, seed: int) -> None:
        self.calls += 1
        self._submitted = len(requests)
        self._queue.extend(requests)
        self._round = round
        self._seed = seed

    def complete_one(self) -> Completion:
        if self._round in self.fail_rounds and self.in_flight <= (self._submitted + 1) // 2:
            # fail once, about halfway through the round
            self.fail_rounds.discard(self._round)
            raise ServiceFailure(f"generation service failed in round {self._round}")
        rank, slot = self._queue.popleft()
        key = f"{self._seed}|{self.checkpoint_id}|{self._round}|{rank}|{slot}"
        digest = hashlib.sha256(key.encode()).hexdigest()[:16]
        return Completion(rank, slot, self._round, f"{self.checkpoint_id}:{digest}", self.checkpoint_id)

    def abort(self) -> None:
        self._queue.clear()

    def request_swap(self, new_checkpoint: str) -> bool:
        """Returns True if applied immediately, False if deferred."""
        if new_checkpoint in (self.checkpoint_id, self.pending_checkpoint):
            raise SwapRejected(f"checkpoint {new_checkpoint!r} is already current or pending")
        if self.in_flight:
            self.pending_checkpoint = new_checkpoint
            return False
        self.checkpoint_id = new_checkpoint
        return True

    def apply_pending(self) -> str | None:
        if self.pending_checkpoint is None or self.in_flight:
            return None
        self.checkpoint_id, self.pending_checkpoint = self.pending_checkpoint, None
        return self.checkpoint_id


@dataclass
class SwapReport:
    old_checkpoint: str
    new_checkpoint: str
    requested_round: int
    inject_at: str
    acknowledged: bool = False
    deferred: bool = False
    applied_round: int | None = None  # first round generated with the new checkpoint
    attribution: dict = field(default_factory=dict)  # (round, rank, slot) -> checkpoint_id


class GenerationCoordinator:
    def __init__(
        self,
        num_ranks: int,
        context_window: int = 4096,
        reserved_completion: int = 1024,
        swap_policy: SwapPolicy | str = SwapPolicy.DEFER,
    ):
        if num_ranks < 1:
            raise ValueError("need at least one rank")
        self.num_ranks = num_ranks
        self.context_window = context_window
        self.reserved_completion = reserved_completion
        self.swap_policy = SwapPolicy(swap_policy)
        self.round = 0
        self.round_counters = [0] * num_ranks
        self.trace: list[TraceEvent] = []
        self._sender_seq: dict[int, int] = defaultdict(int)
        self._inboxes: dict[int, deque] = {r: deque() for r in range(num_ranks)}
        self._injection: tuple[str, SwapReport] | None = None
        self._open_reports: list[SwapReport] = []

    # -- plumbing ----------------------------------------------------------

    def _event(self, kind, rank=None, slot=None, checkpoint_id=None, detail=None) -> None:
        self.trace.append(TraceEvent(len(self.trace), kind, rank, self.round, slot, checkpoint_id, detail))

    def _send(self, kind: MessageKind, sender: int, receiver: int, payload=None) -> CoordinatorMessage:
        self._sender_seq[sender] += 1
        msg = CoordinatorMessage(kind, sender, receiver, self._sender_seq[sender], self.round, payload)
        if receiver >= 0:
            self._inboxes[receiver].append(msg)
        self._event(
            kind.value,
            rank=sender,
            detail={"to": receiver, "seq": msg.sequence, **(payload if isinstance(payload, dict) else {})},
        )
        return msg

    def _receive(self, rank: int, kind: MessageKind) -> CoordinatorMessage:
        """Pop the first message of ``kind``; control messages (swap acks)
        queued ahead of it are consumed."""
        inbox = self._inboxes[rank]
        while inbox:
            msg = inbox.popleft()
            if msg.kind is kind:
                return msg
            if msg.kind is not MessageKind.SWAP_ACK:
                raise RuntimeError(f"rank {rank} expected {kind.value}, got {msg.kind.value}")
        raise RuntimeError(f"rank {rank} has no {kind.value} message")

    def filter(self, rank: int, prompt_sizes: Sequence[int]) -> list[PromptSlot]:
        slots = [PromptSlot(rank, i, n) for i, n in enumerate(prompt_sizes)]
        return filter_prompts(slots, self.context_window, self.reserved_completion)

    def _ack(self, service: MockGenerationService, report: SwapReport | None) -> None:
        self._send(MessageKind.SWAP_ACK, SERVICE, RANK0, {"checkpoint": service.checkpoint_id})
        if report is not None:
            report.acknowledged = True

    # -- protocol ----------------------------------------------------------

    def run_round(
        self, rank_batches: Sequence[Sequence[PromptSlot]], service: MockGenerationService, seed: int = 0
    ) -> list[list[Completion]]:
        """Filter-report, gather, generate, scatter; one completion per slot.

        A service failure aborts the round before any scatter: no rank's
        round counter moves and the exception propagates.
        """
        if len(rank_batches) != self.num_ranks:
            raise ValueError(f"{len(rank_batches)} batches for {self.num_ranks} ranks")
        for rank, batch in enumerate(rank_batches):
            for s in batch:
                if s.status is None or s.rank != rank:
                    raise ValueError(f"unfiltered or misrouted slot {s}")
            skipped = [s.slot_index for s in batch if s.status is SlotStatus.SKIPPED]
            valid = [s.slot_index for s in batch if s.status is SlotStatus.VALID]
            self._send(MessageKind.FILTER_REPORT, rank, RANK0, {"slots": len(batch), "skipped": skipped})
            self._send(MessageKind.GATHER, rank, RANK0, {"valid": valid})

        requests: list[tuple[int, int]] = []
        inbox = self._inboxes[RANK0]
        while inbox:
            msg = inbox.popleft()
            if msg.kind is MessageKind.GATHER:
                requests.extend((msg.sender, i) for i in msg.payload["valid"])

        generated: dict[tuple[int, int], Completion] = {}
        inject_after = len(requests) // 2
        if requests:
            service.submit(requests, self.round, seed)
            self._event("submit", rank=RANK0, checkpoint_id=service.checkpoint_id, detail={"requests": len(requests)})
        try:
            for k in range(len(requests)):
                if k == inject_after:
                    self._deliver_injection(service)
                c = service.complete_one()
                generated[(c.rank, c.slot_index)] = c
                self._event("completion", rank=c.rank, slot=c.slot_index, checkpoint_id=c.checkpoint_id)
        except ServiceFailure as exc:
            service.abort()
            self._event("round_abort", detail={"error": str(exc)})
            self._apply_pending(service, self.round)
            raise
        if not requests:
            self._deliver_injection(service)
        if self.swap_policy is SwapPolicy.DRAIN:
            self._apply_pending(service, self.round + 1)

        out: list[list[Completion]] = []
        for rank, batch in enumerate(rank_batches):
            payload = [generated[(rank, s.slot_index)] for s in batch if s.status is SlotStatus.VALID]
            self._send(MessageKind.SCATTER, RANK0, rank, {"completions": len(payload)})
        for rank, batch in enumerate(rank_batches):
            self._receive(rank, MessageKind.SCATTER)
            row = []
            for s in batch:
                if s.status is SlotStatus.SKIPPED:
                    c = Completion(rank, s.slot_index, self.round, EMPTY_COMPLETION, None)
                else:
                    c = generated[(rank, s.slot_index)]
                row.append(c)
                self._event("deliver", rank=rank, slot=s.slot_index, checkpoint_id=c.checkpoint_id,
                            detail="empty" if c.empty else "generated")
            out.append(row)

        self._attribute(out)
        for rank in range(self.num_ranks):
            self.round_counters[rank] += 1
            self._event("round_end", rank=rank, detail={"counter": self.round_counters[rank]})
        self.round += 1
        self._apply_pending(service, self.round)
        return out

    def _deliver_injection(self, service: MockGenerationService) -> None:
        if self._injection is None:
            return
        new_id, report = self._injection
        self._injection = None
        self._send(MessageKind.SWAP_REQUEST, RANK0, SERVICE, {"checkpoint": new_id})
        if service.request_swap(new_id):
            report.applied_round = self.round
            self._ack(service, report)
        else:
            report.deferred = True
            self._event("swap_deferred", rank=RANK0, checkpoint_id=new_id,
                        detail={"in_flight": service.in_flight})

    def _apply_pending(self, service: MockGenerationService, first_round: int) -> None:
        pending = service.pending_checkpoint
        if pending is not None and service.apply_pending():
            report = next((r for r in self._open_reports if r.new_checkpoint == pending), None)
            if report is not None:
                report.applied_round = first_round
            self._ack(service, report)

    def _attribute(self, completions: list[list[Completion]]) -> None:
        still_open = []
        for report in self._open_reports:
            for row in completions:
                for c in row:
                    if not c.empty:
                        report.attribution[(c.round, c.rank, c.slot_index)] = c.checkpoint_id
            done = report.applied_round is not None and self.round >= report.applied_round
            if not done:
                still_open.append(report)
        self._open_reports = still_open

    def hot_swap(
        self, service: MockGenerationService, new_checkpoint: str, inject_at: str = "boundary"
    ) -> SwapReport:
        """Request a checkpoint swap.

        ``inject_at="boundary"`` applies it now (the service is idle between
        rounds).  ``"mid_round"`` delivers the request halfway through the
        next round's generations; the service defers it until they finish.
        """
        if inject_at not in ("boundary", "mid_round"):
            raise ValueError(f"inject_at must be 'boundary' or 'mid_round', got {inject_at!r}")
        if new_checkpoint in (service.checkpoint_id, service.pending_checkpoint) or (
            self._injection is not None
        ):
            raise SwapRejected(f"swap to {new_checkpoint!r} rejected")
        report = SwapReport(service.checkpoint_id, new_checkpoint, self.round, inject_at)
        self._open_reports.append(report)
        if inject_at == "boundary":
            self._injection = (new_checkpoint, report)
            self._deliver_injection(service)
        else:
            self._injection = (new_checkpoint, report)
        return report


# ---------------------------------------------------------------------------
# harness


@dataclass(frozen=True)
class SimConfig:
    ranks: int = 4
    rounds: int = 10
    batch_size: int = 4
    context_window: int = 4096
    reserved_completion: int = 1024
    skip_rate: float = 0.2
    swap_every: int = 0  # 0 disables swaps
    swap_mode: str = "boundary"  # or "mid_round"
    swap_policy: str = SwapPolicy.DEFER.value
    fail_rounds: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.ranks < 1 or self.rounds < 0 or self.batch_size < 0:
            raise InputError("ranks >= 1, rounds >= 0, batch_size >= 0 required")
        if not 0.0 <= self.skip_rate <= 1.0:
            raise InputError("skip_rate must lie in [0, 1]")
        if not 0 < self.reserved_completion < self.context_window:
            raise InputError("need 0 < reserved_completion < context_window")
        if self.swap_mode not in ("boundary", "mid_round"):
            raise InputError(f"unknown swap_mode {self.swap_mode!r}")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "SimConfig":
        raw = read_kv(path)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise InputError(f"{path}: unknown simulator keys {sorted(unknown)}")
        if "fail_rounds" in raw:
            raw["fail_rounds"] = _int_tuple(raw["fail_rounds"])
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)


def _int_tuple(v) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,)
    return tuple(int(x) for x in str(v).replace(",", " ").split())


def _prompt_sizes(rng: random.Random, cfg: SimConfig) -> list[int]:
    limit = cfg.context_window - cfg.reserved_completion
    sizes = []
    for _ in range(cfg.batch_size):
        if rng.random() < cfg.skip_rate:
            sizes.append(rng.randint(limit + 1, cfg.context_window + cfg.reserved_completion))
        else:
            sizes.append(rng.randint(1, limit))
    return sizes


def run_simulation(cfg: SimConfig) -> list[TraceEvent]:
    """Run ``cfg.rounds`` rounds and return the full event trace.

    With ``swap_every = k`` the service moves to a new checkpoint so that
    rounds k, 2k, ... are the first to use it.  Rounds listed in
    ``fail_rounds`` fail once and are retried with the same prompts.
    """
    rng = random.Random(cfg.seed)
    coord = GenerationCoordinator(cfg.ranks, cfg.context_window, cfg.reserved_completion, cfg.swap_policy)
    service = MockGenerationService("ckpt-0", fail_rounds=cfg.fail_rounds)
    swaps = 0
    for r in range(cfg.rounds):
        if cfg.swap_every:
            if cfg.swap_mode == "boundary" and r > 0 and r % cfg.swap_every == 0:
                swaps += 1
                coord.hot_swap(service, f"ckpt-{swaps}", "boundary")
            elif cfg.swap_mode == "mid_round" and (r + 1) % cfg.swap_every == 0 and r + 1 < cfg.rounds:
                swaps += 1
                coord.hot_swap(service, f"ckpt-{swaps}", "mid_round")
        batches = [coord.filter(rank, _prompt_sizes(rng, cfg)) for rank in range(cfg.ranks)]
        try:
            coord.run_round(batches, service, seed=cfg.seed)
        except ServiceFailure:
            coord.run_round(batches, service, seed=cfg.seed)
    return coord.trace


def write_trace(path: str | Path, trace: Sequence[TraceEvent]) -> None:
    from .io import write_atomic

    write_atomic(path, "".join(dumps_line(e.to_json()) for e in trace))


def audit_trace(trace: Sequence[TraceEvent], num_ranks: int) -> list[str]:
    """Check conservation, empty fill, synchronisation and swap atomicity.

    Works from the trace alone; returns human-readable violations.
    """
    problems: list[str] = []
    submitted: dict[tuple[int, int], tuple[int, set]] = {}
    delivered: dict[tuple[int, int], list[TraceEvent]] = defaultdict(list)
    counters: dict[int, dict[int, int]] = defaultdict(dict)
    aborted: set[int] = set()
    gathered: set[int] = set()
    last_seq: dict[int, int] = defaultdict(int)

    for e in trace:
        if e.kind in {m.value for m in MessageKind}:
            seq = e.detail["seq"]
            if seq <= last_seq[e.rank]:
                problems.append(f"sender {e.rank} sequence not increasing at event {e.sequence}")
            last_seq[e.rank] = seq
        if e.kind == "round_abort":
            aborted.add(e.round)
            for key in [k for k in delivered if k[0] == e.round]:
                problems.append(f"round {e.round}: delivery before abort")
        elif e.kind == MessageKind.FILTER_REPORT.value:
            submitted[(e.round, e.rank)] = (e.detail["slots"], set(e.detail["skipped"]))
        elif e.kind == "deliver":
            delivered[(e.round, e.rank)].append(e)
        elif e.kind == MessageKind.GATHER.value:
            gathered.add(e.round)
        elif e.kind == MessageKind.SCATTER.value and e.round not in gathered:
            problems.append(f"round {e.round}: scatter before gather")
        elif e.kind == "round_end":
            counters[e.round][e.rank] = e.detail["counter"]

    rounds = sorted({k[0] for k in submitted})
    for rnd in rounds:
        ckpts = set()
        for rank in range(num_ranks):
            n, skipped = submitted.get((rnd, rank), (None, set()))
            got = delivered.get((rnd, rank), [])
            if n is None:
                problems.append(f"round {rnd} rank {rank}: no filter report")
                continue
            if [e.slot for e in got] != list(range(n)):
                problems.append(f"round {rnd} rank {rank}: {len(got)} deliveries for {n} slots or out of order")
            for e in got:
                if (e.detail == "empty") != (e.slot in skipped):
                    problems.append(f"round {rnd} rank {rank} slot {e.slot}: empty fill mismatch")
                if e.checkpoint_id is not None:
                    ckpts.add(e.checkpoint_id)
        if len(ckpts) > 1:
            problems.append(f"round {rnd}: mixed checkpoints {sorted(ckpts)}")
        vals = set(counters.get(rnd, {}).values())
        if len(counters.get(rnd, {})) != num_ranks or len(vals) != 1:
            problems.append(f"round {rnd}: ranks out of sync {counters.get(rnd)}")
    return problems
