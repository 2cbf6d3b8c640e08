"""A single Montezuma-like room on a grid.

The room is built from an ASCII map. Walkable feature cells (ladder, conveyor
belt, rope) emit an event when the agent steps onto them from a different
kind of cell. Cliff cells end the episode as a failure. The key is picked up
with ``interact``; ``interact`` on the door while holding the key opens it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .base import MOVES, Action, Cell, EnvState, EpisodeDoneError, StepResult, goal_reached, update_flags

FEATURE_EVENTS = {
    "ladder": "climb down ladder",
    "conveyor": "ride conveyor belt",
    "rope": "grab rope",
}
KEY_EVENT = "pick up key"
DOOR_EVENT = "open door"
CLIFF_EVENT = "fall down cliff"

DEFAULT_MAP = """\
#########
#...S...#
#xxxxxxH#
#.===..H#
#|#xxxxx#
#|......#
#xxxxx..#
#K...D..#
#########"""

# instruction index for the first cell of each feature along the expert route
DEFAULT_TARGETS = (((2, 7), 1), ((3, 4), 2), ((4, 1), 3), ((7, 1), 4), ((7, 5), 5))


@dataclass(frozen=True)
class PlatformRoomConfig:
    width: int
    height: int
    walls: tuple[Cell, ...]
    ladder: tuple[Cell, ...]
    rope: tuple[Cell, ...]
    conveyor: tuple[Cell, ...]
    key: Cell
    door: Cell
    cliffs: tuple[Cell, ...]
    start: Cell
    targets: tuple[tuple[Cell, int], ...]
    fp_radius: float = 2.0
    seed: int = 0
    max_steps: int = 1000

    def __post_init__(self) -> None:
        if self.key == self.door:
            raise ValueError("key cell and door cell must differ")
        if self.fp_radius < 0:
            raise ValueError("fp_radius must be >= 0")

    @property
    def goal_events(self) -> tuple[str, ...]:
        """Events completing each intermediate target, in instruction order."""
        kinds = {**{c: "ladder" for c in self.ladder}, **{c: "conveyor" for c in self.conveyor},
                 **{c: "rope" for c in self.rope}}
        out = []
        for cell, _ in sorted(self.targets, key=lambda x: x[1]):
            if cell == self.key:
                out.append(KEY_EVENT)
            elif cell == self.door:
                out.append(DOOR_EVENT)
            else:
                out.append(FEATURE_EVENTS[kinds[cell]])
        return tuple(out)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "platform"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlatformRoomConfig":
        cells = lambda xs: tuple(tuple(c) for c in xs)  # noqa: E731
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            walls=cells(d["walls"]),
            ladder=cells(d["ladder"]),
            rope=cells(d["rope"]),
            conveyor=cells(d["conveyor"]),
            key=tuple(d["key"]),
            door=tuple(d["door"]),
            cliffs=cells(d["cliffs"]),
            start=tuple(d["start"]),
            targets=tuple((tuple(c), int(k)) for c, k in d["targets"]),
            fp_radius=float(d.get("fp_radius", 2.0)),
            seed=int(d.get("seed", 0)),
            max_steps=int(d.get("max_steps", 1000)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def platform_room_from_map(
    ascii_map: str = DEFAULT_MAP,
    targets=DEFAULT_TARGETS,
    fp_radius: float = 2.0,
    seed: int = 0,
    max_steps: int = 1000,
) -> PlatformRoomConfig:
    """Parse ``#`` wall, ``.`` floor, ``H`` ladder, ``|`` rope, ``=`` conveyor,
    ``x`` cliff, ``K`` key, ``D`` door, ``S`` start."""
    rows = ascii_map.strip("\n").splitlines()
    buckets: dict[str, list[Cell]] = {ch: [] for ch in "#H|=xKDS"}
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch in buckets:
                buckets[ch].append((r, c))
    if len(buckets["K"]) != 1 or len(buckets["D"]) != 1 or len(buckets["S"]) != 1:
        raise ValueError("map needs exactly one key, one door and one start")
    return PlatformRoomConfig(
        width=max(len(line) for line in rows),
        height=len(rows),
        walls=tuple(buckets["#"]),
        ladder=tuple(buckets["H"]),
        rope=tuple(buckets["|"]),
        conveyor=tuple(buckets["="]),
        key=buckets["K"][0],
        door=buckets["D"][0],
        cliffs=tuple(buckets["x"]),
        start=buckets["S"][0],
        targets=tuple((tuple(c), int(k)) for c, k in targets),
        fp_radius=fp_radius,
        seed=seed,
        max_steps=max_steps,
    )


class PlatformRoomEnv:
    kind = "platform"

    def __init__(self, config: PlatformRoomConfig):
        self.config = config
        cfg = config
        self.walls = np.zeros((cfg.height, cfg.width), dtype=bool)
        for c in cfg.walls:
            self.walls[c] = True
        self.kind_of: dict[Cell, str] = {}
        for name, cells in (("ladder", cfg.ladder), ("rope", cfg.rope), ("conveyor", cfg.conveyor)):
            for c in cells:
                self.kind_of[c] = name
        self.cliffs = frozenset(cfg.cliffs)
        self.goal_events = cfg.goal_events
        self.n_targets = len(cfg.targets)
        self.inventory_vocab = ("key",)

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape

    def free_cells(self) -> list[Cell]:
        return [tuple(map(int, rc)) for rc in np.argwhere(~self.walls)]

    def target_cells(self) -> dict[int, Cell]:
        return {k: cell for cell, k in self.config.targets}

    def reset(self, seed: int = 0) -> EnvState:
        return EnvState(pos=self.config.start, inventory=(), flags=(False,) * self.n_targets)

    def step(self, state: EnvState, action: int) -> StepResult:
        if state.done:
            raise EpisodeDoneError("step() called on a finished episode")
        pos, inventory = state.pos, state.inventory
        events: list[str] = []
        failed = False
        if action in MOVES:
            dr, dc = MOVES[action]
            nxt = (pos[0] + dr, pos[1] + dc)
            if not self.walls[nxt]:
                if nxt in self.cliffs:
                    events.append(CLIFF_EVENT)
                    failed = True
                else:
                    kind = self.kind_of.get(nxt)
                    if kind is not None and kind != self.kind_of.get(pos):
                        events.append(FEATURE_EVENTS[kind])
                pos = nxt
        elif action == Action.INTERACT:
            if pos == self.config.key and "key" not in inventory:
                inventory = inventory + ("key",)
                events.append(KEY_EVENT)
            elif pos == self.config.door and "key" in inventory:
                events.append(DOOR_EVENT)
        flags = update_flags(state.flags, events, self.goal_events)
        t = state.t + 1
        success = all(flags)
        done = success or failed or t >= self.config.max_steps
        nxt_state = EnvState(pos, inventory, flags, t, done, failed)
        return StepResult(nxt_state, 1.0 if success else 0.0, tuple(events), done)

    def goal_reached(self, state: EnvState) -> bool:
        return goal_reached(state)

    def render(self, state: EnvState | None = None) -> str:
        cfg = self.config
        grid = [["." for _ in range(cfg.width)] for _ in range(cfg.height)]
        for ch, cells in (("#", cfg.walls), ("H", cfg.ladder), ("|", cfg.rope), ("=", cfg.conveyor), ("x", cfg.cliffs)):
            for r, c in cells:
                grid[r][c] = ch
        grid[cfg.key[0]][cfg.key[1]] = "K"
        grid[cfg.door[0]][cfg.door[1]] = "D"
        pos = state.pos if state is not None else cfg.start
        grid[pos[0]][pos[1]] = "A"
        return "\n".join("".join(row) for row in grid)
