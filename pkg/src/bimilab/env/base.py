"""State/step types and the ordered-flag logic shared by both environments."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

Cell = tuple[int, int]


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    INTERACT = 4
    NOOP = 5


N_ACTIONS = len(Action)

MOVES: dict[int, Cell] = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}


class GenerationError(ValueError):
    """Raised when a layout cannot be generated from the requested parameters."""


class EpisodeDoneError(RuntimeError):
    """Raised when stepping an episode that has already terminated."""


@dataclass(frozen=True)
class EnvState:
    pos: Cell
    inventory: tuple[str, ...]
    flags: tuple[bool, ...]
    t: int = 0
    done: bool = False
    failed: bool = False


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    reward: float
    events: tuple[str, ...]
    done: bool


def goal_reached(state: EnvState) -> bool:
    return all(state.flags)


def update_flags(flags: tuple[bool, ...], events: Sequence[str], goal_events: Sequence[str]) -> tuple[bool, ...]:
    """Set completion flags for goal events, but only in order.

    A goal event whose predecessors are not all set is emitted without effect.
    """
    out = list(flags)
    for ev in events:
        k = sum(out)
        if k < len(goal_events) and ev == goal_events[k]:
            out[k] = True
    return tuple(out)

