"""Walkthroughs, ground-truth fulfillment and the instruction pointer.

A walkthrough is an ordered list of instructions. Each instruction carries the
text a reward model reads and the event sequence that actually satisfies it.
The pointer decides which instruction is currently active; it is advanced by
whichever completion rule the reward pipeline uses (cumulative cap or binary
gate).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(text.lower().split())


@dataclass(frozen=True)
class Instruction:
    index: int
    tokens: tuple[str, ...]
    events: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.events:
            raise ValueError(f"instruction {self.index} has no required events")
        if any(tok != tok.lower() for tok in self.tokens):
            raise ValueError("instruction tokens must be lowercase")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @classmethod
    def from_text(cls, index: int, text: str, events: Sequence[str]) -> "Instruction":
        return cls(index, tokenize(text), tuple(" ".join(tokenize(e)) for e in events))


@dataclass(frozen=True)
class Walkthrough:
    instructions: tuple[Instruction, ...]

    def __post_init__(self) -> None:
        idx = [ins.index for ins in self.instructions]
        if idx != list(range(1, len(idx) + 1)):
            raise ValueError(f"instruction indices must be 1..n, got {idx}")

    @property
    def n(self) -> int:
        return len(self.instructions)

    def __getitem__(self, k: int) -> Instruction:
        """1-based access, matching the pointer convention."""
        return self.instructions[k - 1]

    def __iter__(self):
        return iter(self.instructions)

    def __len__(self) -> int:
        return len(self.instructions)

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "Walkthrough":
        return cls(
            tuple(
                Instruction.from_text(i, rec["text"], rec["events"])
                for i, rec in enumerate(records, start=1)
            )
        )

    def to_records(self) -> list[dict]:
        return [{"text": ins.text, "events": list(ins.events)} for ins in self.instructions]

    @classmethod
    def load(cls, path: str | Path) -> "Walkthrough":
        return cls.from_records(json.loads(Path(path).read_text()))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=2) + "\n")


def fulfills(events: Sequence[str], instr: Instruction) -> bool:
    """True iff the instruction's required events occur, in order, within ``events``."""
    it = iter(events)
    return all(any(ev == req for ev in it) for req in instr.events)


class FulfillmentTracker:
    """Incremental ground truth for a whole walkthrough.

    Instruction k counts as fulfilled once the concatenated required events of
    instructions 1..k have appeared as an ordered subsequence of the episode's
    events. Greedy matching gives the earliest such time, which is the same
    rule the environments use to set their completion flags.
    """

    def __init__(self, walkthrough: Walkthrough):
        self.walkthrough = walkthrough
        self._required: list[str] = []
        self._ends: list[int] = []
        for ins in walkthrough:
            self._required.extend(ins.events)
            self._ends.append(len(self._required))
        self.reset()

    def reset(self) -> None:
        self._pos = 0
        self.completed = 0
        self.times: dict[int, int] = {}

    def update(self, step_events: Sequence[str], t: int) -> list[int]:
        newly: list[int] = []
        for ev in step_events:
            if self._pos < len(self._required) and ev == self._required[self._pos]:
                self._pos += 1
                while self.completed < len(self._ends) and self._pos >= self._ends[self.completed]:
                    self.completed += 1
                    self.times[self.completed] = t
                    newly.append(self.completed)
        return newly


@dataclass(frozen=True)
class PointerState:
    n: int
    m: int = 1
    r_cum: float = 0.0
    fired: bool = False
    history: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if not 1 <= self.m <= self.n + 1:
            raise ValueError(f"pointer {self.m} outside 1..{self.n + 1}")
        if self.r_cum < 0:
            raise ValueError("cumulative reward must be non-negative")

    @property
    def exhausted(self) -> bool:
        return self.m > self.n


def advance_pointer(ptr: PointerState, completed: bool, t: int) -> PointerState:
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return PointerState(n=ptr.n)
    if completed:
        return PointerState(
            n=ptr.n, m=min(ptr.m + 1, ptr.n + 1), history=ptr.history + (t,)
        )
    return ptr


def check_completion_cumulative(
    ptr: PointerState, reward_increment: float, cap: float, t: int | None = None
) -> tuple[PointerState, bool]:
    """Accumulate similarity reward; the instruction completes once the cap is reached.

    The boundary is inclusive. When ``t`` is given and the instruction
    completes, the returned pointer is already advanced.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    if reward_increment < 0:
        raise ValueError("reward increment must be non-negative")
    ptr = replace(ptr, r_cum=ptr.r_cum + reward_increment)
    completed = ptr.r_cum >= cap
    if completed and t is not None:
        ptr = advance_pointer(ptr, True, max(t, 1))
    return ptr, completed


def check_completion_binary(
    ptr: PointerState, binary_signal: int, t: int | None = None
) -> tuple[PointerState, bool]:
    completed = binary_signal == 1
    if completed:
        ptr = replace(ptr, fired=True)
        if t is not None:
            ptr = advance_pointer(ptr, True, max(t, 1))
    return ptr, completed
