"""Multi-room "go to sequence" gridworld.

Rooms are ``room_size x room_size`` interior cells arranged in ``rows x cols``,
separated by one-cell walls with a single doorway in every shared wall. The
agent must touch (``interact`` while standing on) a list of target objects in
order. Distractor objects share a colour or a shape with some target, so a
lexical scorer finds them partially similar to the instructions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .base import (
    MOVES,
    Action,
    Cell,
    EnvState,
    EpisodeDoneError,
    GenerationError,
    StepResult,
    goal_reached,
    update_flags,
)

OBJECT_TYPES = ("ball", "box", "key")
COLORS = ("red", "green", "blue", "purple", "yellow", "grey")


@dataclass(frozen=True)
class PlacedObject:
    obj: str
    color: str
    room: int
    cell: Cell

    @property
    def event(self) -> str:
        return f"touch {self.color} {self.obj}"


@dataclass(frozen=True)
class GridSeqConfig:
    rows: int
    cols: int
    room_size: int
    targets: tuple[PlacedObject, ...]
    seed: int
    max_steps: int = 500
    distractors: tuple[PlacedObject, ...] = ()
    doors: tuple[Cell, ...] = ()
    start: Cell = (1, 1)

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if self.room_size < 3:
            raise ValueError("room_size must be >= 3")
        if not self.targets:
            raise ValueError("at least one target is required")

    @property
    def height(self) -> int:
        return self.rows * (self.room_size + 1) + 1

    @property
    def width(self) -> int:
        return self.cols * (self.room_size + 1) + 1

    @property
    def goal_events(self) -> tuple[str, ...]:
        return tuple(t.event for t in self.targets)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "gridseq"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSeqConfig":
        def objs(items):
            return tuple(
                PlacedObject(o["obj"], o["color"], int(o["room"]), tuple(o["cell"])) for o in items
            )

        return cls(
            rows=int(d["rows"]),
            cols=int(d["cols"]),
            room_size=int(d["room_size"]),
            targets=objs(d["targets"]),
            seed=int(d["seed"]),
            max_steps=int(d.get("max_steps", 500)),
            distractors=objs(d.get("distractors", [])),
            doors=tuple(tuple(c) for c in d.get("doors", [])),
            start=tuple(d["start"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _room_cells(rows: int, cols: int, rs: int, room: int) -> list[Cell]:
    r0 = (room // cols) * (rs + 1) + 1
    c0 = (room % cols) * (rs + 1) + 1
    return [(r0 + i, c0 + j) for i in range(rs) for j in range(rs)]


def generate_gridseq(
    seed: int,
    rows: int = 3,
    cols: int = 3,
    room_size: int = 5,
    num_targets: int = 3,
    num_distractors: int = 2,
    max_steps: int = 500,
) -> GridSeqConfig:
    if num_targets < 1:
        raise GenerationError("num_targets must be >= 1")
    if rows < 1 or cols < 1 or room_size < 3:
        raise GenerationError("grid dimensions must be positive and room_size >= 3")
    n_rooms = rows * cols
    n_objects = num_targets + num_distractors
    if n_objects + 1 > n_rooms * room_size * room_size:
        raise GenerationError(
            f"{n_objects} objects plus the agent do not fit in {n_rooms} rooms of {room_size}x{room_size}"
        )
    if n_objects > len(OBJECT_TYPES) * len(COLORS):
        raise GenerationError("not enough distinct object/colour combinations")

    rng = np.random.default_rng(seed)
    rs = room_size
    doors: list[Cell] = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                wall_col = (c + 1) * (rs + 1)
                doors.append((r * (rs + 1) + 1 + int(rng.integers(rs)), wall_col))
            if r + 1 < rows:
                wall_row = (r + 1) * (rs + 1)
                doors.append((wall_row, c * (rs + 1) + 1 + int(rng.integers(rs))))

    free = {room: _room_cells(rows, cols, rs, room) for room in range(n_rooms)}
    start_cells = free[0]
    start = start_cells.pop(int(rng.integers(len(start_cells))))

    combos = [(o, c) for o in OBJECT_TYPES for c in COLORS]
    used: set[tuple[str, str]] = set()

    def place(obj: str, color: str) -> PlacedObject:
        rooms = [room for room in range(n_rooms) if free[room]]
        room = rooms[int(rng.integers(len(rooms)))]
        cell = free[room].pop(int(rng.integers(len(free[room]))))
        used.add((obj, color))
        return PlacedObject(obj, color, room, cell)

    targets = []
    for _ in range(num_targets):
        avail = [cmb for cmb in combos if cmb not in used]
        obj, color = avail[int(rng.integers(len(avail)))]
        targets.append(place(obj, color))

    distractors = []
    for _ in range(num_distractors):
        # share one token with a target: same colour, different shape (or vice versa)
        base = targets[int(rng.integers(len(targets)))]
        near = [(o, base.color) for o in OBJECT_TYPES] + [(base.obj, c) for c in COLORS]
        avail = [cmb for cmb in near if cmb not in used]
        if not avail:
            avail = [cmb for cmb in combos if cmb not in used]
        obj, color = avail[int(rng.integers(len(avail)))]
        distractors.append(place(obj, color))

    return GridSeqConfig(
        rows=rows,
        cols=cols,
        room_size=room_size,
        targets=tuple(targets),
        seed=seed,
        max_steps=max_steps,
        distractors=tuple(distractors),
        doors=tuple(doors),
        start=start,
    )


class GridSeqEnv:
    """Deterministic dynamics over immutable :class:`EnvState` values."""

    kind = "gridseq"

    def __init__(self, config: GridSeqConfig):
        self.config = config
        cfg = config
        walls = np.zeros((cfg.height, cfg.width), dtype=bool)
        walls[:: cfg.room_size + 1, :] = True
        walls[:, :: cfg.room_size + 1] = True
        for d in cfg.doors:
            walls[d] = False
        self.walls = walls
        self.objects: dict[Cell, PlacedObject] = {
            o.cell: o for o in (*cfg.targets, *cfg.distractors)
        }
        self.goal_events = cfg.goal_events
        self.n_targets = len(cfg.targets)
        self.inventory_vocab: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape

    def free_cells(self) -> list[Cell]:
        return [tuple(map(int, rc)) for rc in np.argwhere(~self.walls)]

    def target_cells(self) -> dict[int, Cell]:
        return {k: o.cell for k, o in enumerate(self.config.targets, start=1)}

    def reset(self, seed: int = 0) -> EnvState:
        return EnvState(pos=self.config.start, inventory=(), flags=(False,) * self.n_targets)

    def step(self, state: EnvState, action: int) -> StepResult:
        if state.done:
            raise EpisodeDoneError("step() called on a finished episode")
        pos = state.pos
        events: tuple[str, ...] = ()
        if action in MOVES:
            dr, dc = MOVES[action]
            nxt = (pos[0] + dr, pos[1] + dc)
            if not self.walls[nxt]:
                pos = nxt
        elif action == Action.INTERACT:
            obj = self.objects.get(pos)
            if obj is not None:
                events = (obj.event,)
        flags = update_flags(state.flags, events, self.goal_events)
        t = state.t + 1
        success = all(flags)
        reward = 1.0 if success else 0.0
        done = success or t >= self.config.max_steps
        nxt_state = EnvState(pos=pos, inventory=(), flags=flags, t=t, done=done)
        return StepResult(nxt_state, reward, events, done)

    def goal_reached(self, state: EnvState) -> bool:
        return goal_reached(state)

    def render(self, state: EnvState | None = None) -> str:
        grid = [["#" if w else "." for w in row] for row in self.walls]
        for o in self.config.distractors:
            grid[o.cell[0]][o.cell[1]] = "d"
        for k, o in enumerate(self.config.targets, start=1):
            grid[o.cell[0]][o.cell[1]] = str(k % 10)
        pos = state.pos if state is not None else self.config.start
        grid[pos[0]][pos[1]] = "A"
        return "\n".join("".join(row) for row in grid)
